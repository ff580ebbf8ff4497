"""Command line front-end: ``corr3d-extract``.

Success prints a one-line JSON summary on stdout; failures print a
one-line JSON error on stderr and exit 2 (bad invocation or inputs) or
3 (extraction failed). Output depends only on the capture, the model's
fixed weights, --resolution and --layer.
"""

import argparse
import json
import sys

from .errors import ExtractError
from .job import ExtractionJob, extract
from .models import available_models


def _resolution(text):
    parts = text.lower().split("x")
    try:
        h, w = (int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"resolution must be positive, got {text!r}")
    return h, w


def build_parser():
    p = argparse.ArgumentParser(
        prog="corr3d-extract",
        description="Serialize posed RGB-D captures into scene directories "
        "for correspondence scoring.",
    )
    p.add_argument("--model", required=True,
                   help=f"model identifier ({', '.join(available_models())})")
    p.add_argument("--input", required=True, help="capture directory")
    p.add_argument("--out", required=True, help="scene directory to write")
    p.add_argument("--resolution", type=_resolution, default=None, metavar="HxW",
                   help="output feature grid; must divide the input resolution "
                   "(default: input resolution)")
    p.add_argument("--layer", type=int, default=0,
                   help="which backbone layer to tap (stubs reseed their weights)")
    p.add_argument("--deterministic", action="store_true",
                   help="force deterministic extraction in adapters with "
                   "nondeterministic kernels; stub models are always deterministic")
    return p


def run_cli(argv) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    job = ExtractionJob(
        model=args.model,
        input_dir=args.input,
        out_dir=args.out,
        resolution=args.resolution,
        layer=args.layer,
        deterministic=args.deterministic,
    )
    try:
        manifest = extract(job)
        with open(manifest, "r", encoding="utf-8") as fh:
            n_frames = len(json.load(fh)["frames"])
    except ExtractError as e:
        print(json.dumps({"error": str(e), "type": e.__class__.__name__}),
              file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(json.dumps({"error": str(e), "type": "OSError"}), file=sys.stderr)
        return 3
    print(json.dumps({"command": "extract", "model": args.model,
                      "manifest": manifest, "frames": n_frames}))
    return 0


def main() -> int:
    return run_cli(sys.argv[1:])
