"""Regenerate everything under fixtures/ deterministically.

Run from the repository root:

    python scripts/make_fixtures.py
"""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from corr3d import FrameRecord, Scene, SynthSpec, Tensor, TrainConfig, write_scene, write_tensor

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
FIX = os.path.join(ROOT, "fixtures")


def make_tiny_scene():
    """Two frames, two voxels, mean pair cosine exactly 0.5.

    Identity camera at the origin: pixel (u, v) with depth z lands at
    (z*u, z*v, z). Depths (1, 2) along row 0 put the two cells in voxels
    (0,0,0) and (2,0,1) of a unit grid. Both frames see the same geometry;
    the feature pairs are orthogonal in the first voxel and identical in
    the second, so the score is (0 + 1) / 2.
    """
    depth = np.array([[1.0, 2.0]], dtype=np.float32)
    k = np.eye(3)
    t = np.eye(4)
    feats = [
        np.array([[[1.0, 0.0], [1.0, 0.0]]], dtype=np.float32),
        np.array([[[0.0, 1.0], [1.0, 0.0]]], dtype=np.float32),
    ]
    frames = [
        FrameRecord(
            id=f"cam{i}",
            depth=Tensor.from_array(depth),
            intrinsics=k,
            extrinsics=t,
            features=Tensor.from_array(feats[i]),
        )
        for i in range(2)
    ]
    scene = Scene(frames=frames, voxel_size=1.0, frame_budget=8)
    return write_scene(scene, os.path.join(FIX, "tiny"))


def make_q8_csv():
    """Eight samples in four bins of two; per-bin metric means 15/35/55/75."""
    rows = ["id,score,metric"]
    for i in range(8):
        rows.append(f"s{i},{(i + 1) / 10},{(i + 1) * 10}")
    path = os.path.join(FIX, "q8.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    return path


def make_golden_tensor():
    """A two-element f32 tensor with hand-checkable bytes."""
    path = os.path.join(FIX, "golden_f32.c3d")
    write_tensor(Tensor.from_array(np.array([1.5, -2.0], dtype=np.float32)), path)
    return path


def make_default_docs():
    with open(os.path.join(FIX, "default_spec.json"), "w", encoding="utf-8") as fh:
        json.dump(SynthSpec().to_dict(), fh, indent=2)
        fh.write("\n")
    with open(os.path.join(FIX, "default_train.json"), "w", encoding="utf-8") as fh:
        json.dump(TrainConfig().to_dict(), fh, indent=2)
        fh.write("\n")


def main():
    os.makedirs(FIX, exist_ok=True)
    print(make_tiny_scene())
    print(make_q8_csv())
    print(make_golden_tensor())
    make_default_docs()
    print(os.path.join(FIX, "default_spec.json"))
    print(os.path.join(FIX, "default_train.json"))


if __name__ == "__main__":
    main()
