"""Readers for the capture directory layout.

A capture directory holds one shared ``intrinsics.txt`` (3x3 pinhole
matrix, whitespace separated) plus, per frame, ``{id}.depth.npy`` with
metric depth of shape (H, W) and ``{id}.pose.txt`` with a 4x4
camera-to-world matrix. RGB images may sit alongside; the stub models
ignore them. Frame ids are the sorted depth-file stems.
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import InputError

DEPTH_SUFFIX = ".depth.npy"
POSE_SUFFIX = ".pose.txt"
INTRINSICS_NAME = "intrinsics.txt"


@dataclass
class FrameInputs:
    id: str
    depth: np.ndarray  # (H, W) float32
    pose: np.ndarray  # (4, 4) float64 camera-to-world


def _load_matrix(path, shape, what):
    try:
        m = np.loadtxt(path, dtype=np.float64)
    except OSError:
        raise InputError(f"{what} not found: {path}")
    except ValueError as e:
        raise InputError(f"{what} is not a numeric matrix: {path} ({e})")
    if m.shape != shape:
        raise InputError(f"{what} must be {shape[0]}x{shape[1]}, got {m.shape} in {path}")
    return m


def read_intrinsics(input_dir) -> np.ndarray:
    return _load_matrix(os.path.join(input_dir, INTRINSICS_NAME), (3, 3), "intrinsics")


def read_frames(input_dir) -> list:
    """All frames in the directory, sorted by id. Raises on an empty or
    inconsistent capture so failures happen before any output is written."""
    if not os.path.isdir(input_dir):
        raise InputError(f"input directory not found: {input_dir}")
    ids = sorted(
        name[: -len(DEPTH_SUFFIX)]
        for name in os.listdir(input_dir)
        if name.endswith(DEPTH_SUFFIX)
    )
    if not ids:
        raise InputError(f"no *{DEPTH_SUFFIX} files in {input_dir}")
    frames = []
    for fid in ids:
        try:
            depth = np.load(os.path.join(input_dir, fid + DEPTH_SUFFIX))
        except OSError:
            raise InputError(f"unreadable depth file for frame {fid!r}")
        if depth.ndim != 2:
            raise InputError(f"frame {fid!r}: depth must be 2-D, got shape {depth.shape}")
        if not np.issubdtype(depth.dtype, np.floating):
            raise InputError(f"frame {fid!r}: depth must be floating point, got {depth.dtype}")
        pose = _load_matrix(
            os.path.join(input_dir, fid + POSE_SUFFIX), (4, 4), f"pose for frame {fid!r}"
        )
        frames.append(FrameInputs(id=fid, depth=depth.astype(np.float32), pose=pose))
    first = frames[0]
    for fr in frames[1:]:
        if fr.depth.shape != first.depth.shape:
            raise InputError(
                f"frame {fr.id!r} depth shape {fr.depth.shape} differs from "
                f"frame {first.id!r} shape {first.depth.shape}"
            )
    return frames
