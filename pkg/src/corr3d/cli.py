"""Command-line front end for the toolkit.

Machine-first: every subcommand emits JSON on stdout (or to ``--out`` /
``--report``), compact by default and indented under ``--pretty``. The
documents match the JSON schemas shipped under ``corr3d/schemas``. Errors
are printed as a single JSON line on stderr; the process exits 0 on
success, 2 when the inputs fail validation, and 3 when a computation
fails on otherwise well-formed data.

Runs are deterministic: with all seeds fixed, repeated invocations are
bytewise identical. ``--threads`` (or the ``CORR3D_THREADS`` environment
variable) caps worker parallelism; the pipeline is vectorized
single-process throughout, so results never depend on it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .errors import ConfigError, Corr3dError, ValidationError
from .geometry import unproject_frame
from .losses import AlignmentMlp, alignment_loss, correspondence_loss
from .metrics import correspondence_score, feature_stack, quartile_report
from .scene import load_scene, write_scene
from .synth import SynthSpec, generate_synthetic_scene
from .tensor_io import write_tensor
from .trainer import TrainConfig, alignment_inputs, run_training
from .voxel import (
    PairMode,
    enumerate_negative_pairs,
    enumerate_positive_pairs,
    pooled_coordinate_maps,
    sample_negative_pairs,
    scene_voxel_grid,
)


def schema_dir() -> str:
    """Directory holding the published JSON schemas."""
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), "schemas")


def _resolve_threads(value) -> int:
    if value is None:
        raw = os.environ.get("CORR3D_THREADS")
        if raw is None:
            return 1
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"CORR3D_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise ConfigError(f"threads must be >= 1, got {value}")
    return value


def _scene_id(path) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _emit(doc: dict, path, pretty: bool):
    if pretty:
        text = json.dumps(doc, indent=2) + "\n"
    else:
        text = json.dumps(doc, separators=(",", ":")) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_json(path, what: str) -> dict:
    if not os.path.exists(path):
        raise ValidationError(f"{what} not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{what} is not valid JSON: {e}")


def _positive_mode(args) -> PairMode:
    if args.mode == "exhaustive":
        return PairMode(kind="exhaustive")
    return PairMode(kind="sampled", seed=args.seed, budget=args.budget)


def _scene_grid(args):
    scene = load_scene(args.scene)
    if getattr(args, "voxel_size", None) is not None:
        scene.voxel_size = args.voxel_size
    coord_maps = pooled_coordinate_maps(scene)
    grid = scene_voxel_grid(scene, coord_maps)
    return scene, coord_maps, grid


def _cmd_unproject(args) -> int:
    scene = load_scene(args.scene)
    os.makedirs(args.out, exist_ok=True)
    frames = []
    for fr in scene.frames:
        cm = unproject_frame(fr.depth, fr.intrinsics, fr.extrinsics)
        rel = f"{fr.id}_coords.c3d"
        write_tensor(cm.to_tensor(), os.path.join(args.out, rel))
        h, w = cm.valid.shape
        frames.append(
            {
                "id": fr.id,
                "path": rel,
                "height": h,
                "width": w,
                "valid_cells": int(np.count_nonzero(cm.valid)),
            }
        )
    doc = {"command": "unproject", "scene_id": _scene_id(args.scene), "out": args.out, "frames": frames}
    _emit(doc, None, args.pretty)
    return 0


def _cmd_score(args) -> int:
    scene, _, grid = _scene_grid(args)
    pairs = enumerate_positive_pairs(grid, _positive_mode(args))
    report = correspondence_score(
        pairs,
        [fr.features for fr in scene.frames],
        scene_id=_scene_id(args.scene),
        voxel_size=scene.voxel_size,
    )
    _emit(report.to_dict(), args.out, args.pretty)
    return 0


def _cmd_pairs(args) -> int:
    _, _, grid = _scene_grid(args)
    if args.kind == "pos":
        pairs = enumerate_positive_pairs(grid, _positive_mode(args))
    elif args.mode == "exhaustive":
        pairs = enumerate_negative_pairs(grid, limit=args.limit)
    else:
        pairs = sample_negative_pairs(grid, args.per_anchor, args.seed)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            pairs.write_csv(fh)
    else:
        pairs.write_csv(sys.stdout)
    return 0


def _cmd_loss(args) -> int:
    scene, coord_maps, grid = _scene_grid(args)
    x = feature_stack([fr.features for fr in scene.frames])
    doc = {"command": "loss", "scene_id": _scene_id(args.scene), "kind": args.kind}
    if args.kind == "corr":
        positives = enumerate_positive_pairs(grid, PairMode(kind="exhaustive"))
        negatives = sample_negative_pairs(grid, args.per_anchor, args.seed)
        res = correspondence_loss(positives, negatives, x, weights=tuple(args.weights))
    else:
        teacher, valid = alignment_inputs(scene, coord_maps)
        if args.mlp:
            mlp = AlignmentMlp.load(args.mlp)
        else:
            mlp = AlignmentMlp.initialize(x.shape[2], teacher.shape[2], seed=args.seed)
        res = alignment_loss(x, teacher, mlp, valid, normalization=args.normalization)
    doc["value"] = res.value
    doc["info"] = dict(res.info)
    if args.grads:
        grads = {"features": res.grad_features.tolist()}
        if res.grad_params is not None:
            for part in ("w1", "b1", "w2", "b2"):
                grads[part] = getattr(res.grad_params, part).tolist()
        doc["gradients"] = grads
    _emit(doc, args.out, args.pretty)
    return 0


def _cmd_quartiles(args) -> int:
    if not os.path.exists(args.csv):
        raise ValidationError(f"csv file not found: {args.csv}")
    samples = []
    with open(args.csv, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and row == ["id", "score", "metric"]):
                continue
            if len(row) != 3:
                raise ValidationError(f"{args.csv}:{lineno}: expected id,score,metric, got {row!r}")
            try:
                samples.append((row[0], float(row[1]), float(row[2])))
            except ValueError:
                raise ValidationError(f"{args.csv}:{lineno}: non-numeric score/metric in {row!r}")
    report = quartile_report(samples)
    _emit(report.to_dict(), args.out, args.pretty)
    return 0


def _cmd_synth(args) -> int:
    spec = SynthSpec.from_dict(_load_json(args.spec, "spec file"))
    scene, truth = generate_synthetic_scene(spec)
    manifest = write_scene(scene, args.out)
    doc = {
        "command": "synth",
        "manifest": manifest,
        "frames": len(scene.frames),
        "points": int(truth.points.shape[0]),
    }
    _emit(doc, None, args.pretty)
    return 0


def _cmd_train(args) -> int:
    scene = load_scene(args.scene)
    cfg = TrainConfig.from_dict(_load_json(args.config, "config file")) if args.config else TrainConfig()
    report = run_training(scene, cfg)
    _emit(report.to_dict(), args.report, args.pretty)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            report.write_csv(fh)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="cap worker parallelism (default: CORR3D_THREADS or 1); results never depend on it")
    common.add_argument("--pretty", action="store_true", help="indent JSON output for humans")

    p = argparse.ArgumentParser(prog="corr3d", description="Multi-view 3D correspondence probing over posed RGB-D scenes.")
    sub = p.add_subparsers(dest="subcommand", required=True)

    sp = sub.add_parser("unproject", parents=[common], help="write per-frame world-coordinate maps")
    sp.add_argument("--scene", required=True, help="scene manifest JSON")
    sp.add_argument("--out", required=True, help="output directory for coordinate tensors")
    sp.set_defaults(fn=_cmd_unproject)

    sp = sub.add_parser("score", parents=[common], help="mean cross-view cosine over same-voxel pairs")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--voxel-size", type=float, default=None, help="override the manifest voxel size")
    sp.add_argument("--mode", choices=["exhaustive", "sampled"], default="exhaustive")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--budget", type=int, default=None, help="sampled mode: max pairs kept per voxel")
    sp.add_argument("--out", default=None, help="write the report here instead of stdout")
    sp.set_defaults(fn=_cmd_score)

    sp = sub.add_parser("pairs", parents=[common], help="emit a pair set as CSV")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--kind", choices=["pos", "neg"], required=True)
    sp.add_argument("--voxel-size", type=float, default=None)
    sp.add_argument("--mode", choices=["exhaustive", "sampled"], default="exhaustive")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--budget", type=int, default=None, help="pos sampled: max pairs kept per voxel")
    sp.add_argument("--per-anchor", type=int, default=2, help="neg sampled: partners per entry")
    sp.add_argument("--limit", type=int, default=10_000, help="neg exhaustive: refuse above this many pairs")
    sp.add_argument("--out", default=None, help="write CSV here instead of stdout")
    sp.set_defaults(fn=_cmd_pairs)

    sp = sub.add_parser("loss", parents=[common], help="evaluate a loss once over the scene features")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--kind", choices=["corr", "align"], required=True)
    sp.add_argument("--voxel-size", type=float, default=None)
    sp.add_argument("--mlp", default=None, help="align: saved head to use instead of a fresh init")
    sp.add_argument("--seed", type=int, default=0, help="head init and negative sampling seed")
    sp.add_argument("--per-anchor", type=int, default=2)
    sp.add_argument("--weights", type=float, nargs=2, default=[1.0, 1.0], metavar=("W_POS", "W_NEG"))
    sp.add_argument("--normalization", choices=["valid", "all"], default="valid")
    sp.add_argument("--grads", action="store_true", help="include gradients in the summary")
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=_cmd_loss)

    sp = sub.add_parser("quartiles", parents=[common], help="bin id,score,metric rows into score quartiles")
    sp.add_argument("--csv", required=True, help="input CSV of id,score,metric rows")
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=_cmd_quartiles)

    sp = sub.add_parser("synth", parents=[common], help="generate a synthetic scene from a spec file")
    sp.add_argument("--spec", required=True, help="spec JSON file")
    sp.add_argument("--out", required=True, help="output directory for the scene")
    sp.set_defaults(fn=_cmd_synth)

    sp = sub.add_parser("train", parents=[common], help="optimize scene features and report score curves")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--config", default=None, help="train config JSON file (defaults apply when omitted)")
    sp.add_argument("--report", default=None, help="write the report here instead of stdout")
    sp.add_argument("--csv", default=None, help="also write the eval curve as CSV")
    sp.set_defaults(fn=_cmd_train)
    return p


def run_cli(argv) -> int:
    """Parse argv (without the program name) and run one subcommand."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse prints usage itself
        return int(e.code) if e.code is not None else 0
    try:
        _resolve_threads(args.threads)
        # stderr is a JSON channel here: float overflow mid-run must not
        # print warnings, it either resolves or surfaces as a typed error.
        with np.errstate(all="ignore"):
            return args.fn(args)
    except Corr3dError as e:
        line = json.dumps({"error": str(e), "type": e.__class__.__name__})
        print(line, file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(json.dumps({"error": str(e), "type": "OSError"}), file=sys.stderr)
        return 3


def main() -> int:
    return run_cli(sys.argv[1:])
