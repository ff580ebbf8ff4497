"""Synthetic multi-view scene generation with exact ground truth.

The generator plants one world point per target voxel (plus an anchor at
the bbox corner) and synthesizes pinhole views of them. Each observation
is placed exactly on an integer-pixel ray: for a target voxel we project
its center, snap to the nearest pixel, and move the point to the nearest
position on that pixel's ray. The stored depth is the float32-rounded
camera depth of that position, so unprojecting the emitted scene recovers
the per-view points to within float precision, every recovered point lands
in its intended voxel with margin, and the grid origin equals the anchor
coordinate exactly.

Teacher features are a fixed random linear map of each point's voxel
center, hence identical across views within a voxel; student features are
independent random unit vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SpecError
from .scene import DEFAULT_FRAME_BUDGET, FrameRecord, Scene
from .tensor_io import Tensor

# Keep recovered points at least this fraction of a voxel away from the
# voxel walls so float32 depth storage can never flip a key.
_MARGIN_FRAC = 0.05


@dataclass(frozen=True)
class SynthSpec:
    n_views: int = 4
    feature_h: int = 16
    feature_w: int = 16
    feature_dim: int = 64
    teacher_dim: int = 32
    n_points: int = 300
    bbox_lo: tuple = (0.0, 0.0, 0.0)
    bbox_hi: tuple = (1.0, 1.0, 1.0)
    voxel_size: float = 0.1
    teacher_noise: float = 0.0
    depth_noise: float = 0.0
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise SpecError(f"unknown synth spec keys: {sorted(unknown)}")
        kwargs = dict(doc)
        for key in ("bbox_lo", "bbox_hi"):
            if key in kwargs:
                kwargs[key] = tuple(float(x) for x in kwargs[key])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "n_views": self.n_views,
            "feature_h": self.feature_h,
            "feature_w": self.feature_w,
            "feature_dim": self.feature_dim,
            "teacher_dim": self.teacher_dim,
            "n_points": self.n_points,
            "bbox_lo": list(self.bbox_lo),
            "bbox_hi": list(self.bbox_hi),
            "voxel_size": self.voxel_size,
            "teacher_noise": self.teacher_noise,
            "depth_noise": self.depth_noise,
            "seed": self.seed,
        }


@dataclass
class ViewObservations:
    cells: np.ndarray      # (k,) row-major feature-cell indices
    point_ids: np.ndarray  # (k,) indices into the point list
    coords: np.ndarray     # (k, 3) exact per-view world coordinates


@dataclass
class SynthTruth:
    """What the generator planted, for oracle-style verification."""

    points: np.ndarray     # (n, 3) canonical world points (anchor + voxel centers)
    keys: np.ndarray       # (n, 3) voxel keys in the grid anchored at the bbox corner
    observations: list = field(default_factory=list)  # one ViewObservations per view

    def to_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "keys": self.keys.tolist(),
            "observations": [
                {
                    "cells": o.cells.tolist(),
                    "point_ids": o.point_ids.tolist(),
                    "coords": o.coords.tolist(),
                }
                for o in self.observations
            ],
        }


def _validate_spec(spec: SynthSpec):
    if spec.n_views < 1:
        raise SpecError(f"n_views must be >= 1, got {spec.n_views}")
    if spec.feature_h < 1 or spec.feature_w < 1:
        raise SpecError(f"feature grid must be at least 1x1, got {spec.feature_h}x{spec.feature_w}")
    if spec.feature_dim < 1 or spec.teacher_dim < 1:
        raise SpecError("feature and teacher dims must be >= 1")
    if spec.n_points < 1:
        raise SpecError(f"n_points must be >= 1, got {spec.n_points}")
    if not spec.voxel_size > 0:
        raise SpecError(f"voxel_size must be > 0, got {spec.voxel_size}")
    if spec.seed < 0:
        raise SpecError(f"seed must be non-negative, got {spec.seed}")
    if spec.teacher_noise < 0 or spec.depth_noise < 0:
        raise SpecError("noise levels must be non-negative")
    lo = np.asarray(spec.bbox_lo, dtype=np.float64)
    hi = np.asarray(spec.bbox_hi, dtype=np.float64)
    if lo.shape != (3,) or hi.shape != (3,) or not np.all(hi > lo):
        raise SpecError(f"bbox must have positive extent per axis, got lo={lo}, hi={hi}")


def _look_at(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Rotation with columns (right, image-down, forward), right-handed."""
    z = target - position
    z = z / np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def generate_synthetic_scene(spec: SynthSpec):
    """Build a scene plus its ground truth. Deterministic in the seed.

    Returns (Scene, SynthTruth). The scene is fully valid and can be
    written with ``write_scene`` and reloaded with ``load_scene``.
    """
    _validate_spec(spec)
    lo = np.asarray(spec.bbox_lo, dtype=np.float64)
    hi = np.asarray(spec.bbox_hi, dtype=np.float64)
    extent = hi - lo
    vs = float(spec.voxel_size)

    # Interior voxel lattice: keys in [1, m-2] per axis stay clear of the
    # bbox faces so every snapped observation outranks the anchor per axis.
    m = np.floor(extent / vs + 1e-9).astype(np.int64)
    if np.any(m < 3):
        raise SpecError(
            f"bbox extent {extent.tolist()} supports lattice {m.tolist()} at voxel size {vs}; "
            "need at least 3 voxels per axis"
        )
    interior = m - 2
    capacity = int(np.prod(interior))
    if spec.n_points - 1 > capacity:
        raise SpecError(
            f"cannot place {spec.n_points} points: only {capacity} interior voxels "
            f"(plus the anchor) are available at voxel size {vs}"
        )

    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))

    # Point 0 is the anchor at the bbox corner; the rest are distinct
    # interior voxel centers.
    flat = rng.choice(capacity, size=spec.n_points - 1, replace=False)
    kx, rem = np.divmod(flat, interior[1] * interior[2])
    ky, kz = np.divmod(rem, interior[2])
    keys = np.concatenate(
        [np.zeros((1, 3), dtype=np.int64), np.stack([kx + 1, ky + 1, kz + 1], axis=1)], axis=0
    )
    points = lo + (keys + 0.5) * vs
    points[0] = lo
    n_pts = spec.n_points

    H, W = spec.feature_h, spec.feature_w
    center = (lo + hi) / 2.0
    radius = 1.55 * float(np.max(extent))
    focal = max(H, W) * radius / (1.25 * float(np.max(extent)))
    K = np.array(
        [[focal, 0.0, (W - 1) / 2.0], [0.0, focal, (H - 1) / 2.0], [0.0, 0.0, 1.0]]
    )
    Kinv = np.linalg.inv(K)
    z_near = 0.25 * radius
    margin = _MARGIN_FRAC * vs

    frames = []
    observations = []
    rng_noise = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    teacher_map = rng_noise.normal(0.0, 1.0, size=(spec.teacher_dim, 3))
    # Projected voxel centers: identical across views within a voxel, and
    # nonzero even for the anchor voxel at the bbox corner.
    voxel_centers = lo + (keys + 0.5) * vs
    teacher_vecs = voxel_centers @ teacher_map.T

    for view in range(spec.n_views):
        azimuth = 2.0 * np.pi * view / spec.n_views + rng.uniform(-0.25, 0.25)
        elevation = rng.uniform(0.35, 0.75)
        pos = center + radius * np.array(
            [np.cos(elevation) * np.cos(azimuth), np.cos(elevation) * np.sin(azimuth), np.sin(elevation)]
        )
        R = _look_at(pos, center)

        if view == 0:
            # Solve the camera position so one pixel ray passes through the
            # anchor at a float32-exact depth: the recovered corner then
            # equals the grid origin bit for bit. Snapping to the pixel the
            # anchor naturally projects to keeps the camera (and frustum)
            # essentially where the look-at placed it.
            cam0 = R.T @ (points[0] - pos)
            if cam0[2] > z_near:
                u0 = K[0, 0] * cam0[0] / cam0[2] + K[0, 2]
                v0 = K[1, 1] * cam0[1] / cam0[2] + K[1, 2]
                c0 = min(max(int(round(u0)), 0), W - 1)
                r0 = min(max(int(round(v0)), 0), H - 1)
            else:
                c0, r0 = 0, 0
            ray0 = R @ (Kinv @ np.array([float(c0), float(r0), 1.0]))
            z_star = float(ray0 @ (points[0] - pos)) / float(ray0 @ ray0)
            z0 = float(np.float32(z_star if z_star > z_near else radius))
            pos = points[0] - z0 * ray0
            anchor_pixel = (r0, c0)

        depth = np.zeros((H, W), dtype=np.float64)
        taken = np.zeros((H, W), dtype=bool)
        cells, pids, coords = [], [], []

        if view == 0:
            r0, c0 = anchor_pixel
            depth[r0, c0] = z0
            taken[r0, c0] = True
            cells.append(r0 * W + c0)
            pids.append(0)
            coords.append(points[0].copy())

        for j in range(1, n_pts):
            target = points[j]
            cam = R.T @ (target - pos)
            if cam[2] < z_near:
                continue
            u = K[0, 0] * cam[0] / cam[2] + K[0, 2]
            v = K[1, 1] * cam[1] / cam[2] + K[1, 2]
            c = int(round(u))
            r = int(round(v))
            if not (0 <= c < W and 0 <= r < H) or taken[r, c]:
                continue
            ray = R @ (Kinv @ np.array([float(c), float(r), 1.0]))
            z = float(ray @ (target - pos)) / float(ray @ ray)
            if z <= z_near:
                continue
            z32 = float(np.float32(z))
            q = pos + z32 * ray
            if np.max(np.abs(q - target)) > vs / 2.0 - margin:
                continue
            depth[r, c] = z32
            taken[r, c] = True
            cells.append(r * W + c)
            pids.append(j)
            coords.append(q)

        if spec.depth_noise > 0:
            jitter = 1.0 + spec.depth_noise * rng_noise.standard_normal(depth.shape)
            depth = np.where(depth > 0, depth * jitter, depth)

        student = rng.normal(0.0, 1.0, size=(H * W, spec.feature_dim))
        student /= np.linalg.norm(student, axis=1, keepdims=True)

        teacher = np.zeros((H * W, spec.teacher_dim))
        for cell, pid in zip(cells, pids):
            t = teacher_vecs[pid]
            if spec.teacher_noise > 0:
                t = t + spec.teacher_noise * rng_noise.standard_normal(spec.teacher_dim)
            teacher[cell] = t

        T = np.eye(4)
        T[:3, :3] = R
        T[:3, 3] = pos
        frames.append(
            FrameRecord(
                id=f"view{view:03d}",
                depth=Tensor.from_array(depth.astype(np.float32), dtype="f32"),
                intrinsics=K.copy(),
                extrinsics=T,
                features=Tensor.from_array(
                    student.reshape(H, W, spec.feature_dim).astype(np.float32), dtype="f32"
                ),
                teacher_features=Tensor.from_array(
                    teacher.reshape(H, W, spec.teacher_dim).astype(np.float32), dtype="f32"
                ),
            )
        )
        observations.append(
            ViewObservations(
                cells=np.array(cells, dtype=np.int64),
                point_ids=np.array(pids, dtype=np.int64),
                coords=np.array(coords, dtype=np.float64).reshape(len(coords), 3),
            )
        )

    scene = Scene(
        frames=frames,
        voxel_size=vs,
        frame_budget=max(DEFAULT_FRAME_BUDGET, spec.n_views),
    )
    truth = SynthTruth(points=points, keys=keys, observations=observations)
    return scene, truth
