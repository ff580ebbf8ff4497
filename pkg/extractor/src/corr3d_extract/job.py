"""Extraction jobs: capture directory in, scene directory out.

The output directory is a scene the scoring toolkit loads directly:
``{id}_depth.c3d`` and ``{id}_features.c3d`` per frame plus a
``scene.json`` manifest (schema 1) with row-major intrinsics and
camera-to-world extrinsics. Frames are processed in sorted-id order and
writes are serialized, so a job's output is a pure function of its
inputs and the model's fixed weights.
"""

import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ResolutionError, ShapeMismatchError
from .inputs import read_frames, read_intrinsics
from .models import get_model
from .tensor_writer import write_tensor_file

MANIFEST_NAME = "scene.json"


@dataclass
class ExtractionJob:
    model: str
    input_dir: str
    out_dir: str
    resolution: Optional[tuple] = None  # (H', W'); None keeps the input resolution
    layer: int = 0
    deterministic: bool = False  # adapters honor this; stubs are pure either way
    device: str = "cpu"  # hint for adapters with a device choice


def _output_resolution(job, in_hw):
    if job.resolution is None:
        return in_hw
    oh, ow = job.resolution
    ih, iw = in_hw
    if oh < 1 or ow < 1 or ih % oh != 0 or iw % ow != 0:
        raise ResolutionError(
            f"output resolution {oh}x{ow} does not divide input resolution {ih}x{iw}"
        )
    return oh, ow


def extract(job: ExtractionJob) -> str:
    """Run the job; returns the manifest path."""
    model = get_model(job.model)
    intrinsics = read_intrinsics(job.input_dir)
    frames = read_frames(job.input_dir)
    out_hw = _output_resolution(job, frames[0].depth.shape)

    os.makedirs(job.out_dir, exist_ok=True)
    entries = []
    for fr in frames:
        feats = model.features(fr, intrinsics, out_hw, job.layer)
        expected = (out_hw[0], out_hw[1], model.feature_dim)
        if feats.shape != expected:
            raise ShapeMismatchError(
                f"model {model.name!r} produced shape {feats.shape}, "
                f"declared resolution implies {expected}"
            )
        depth_name = f"{fr.id}_depth.c3d"
        feat_name = f"{fr.id}_features.c3d"
        write_tensor_file(fr.depth.astype(np.float32), os.path.join(job.out_dir, depth_name))
        write_tensor_file(feats.astype(np.float32), os.path.join(job.out_dir, feat_name))
        entries.append(
            {
                "id": fr.id,
                "depth": depth_name,
                "features": feat_name,
                "intrinsics": [float(x) for x in intrinsics.reshape(-1)],
                "extrinsics": [float(x) for x in fr.pose.reshape(-1)],
            }
        )

    manifest_path = os.path.join(job.out_dir, MANIFEST_NAME)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump({"schema": 1, "frames": entries}, fh, indent=2)
        fh.write("\n")
    return manifest_path
