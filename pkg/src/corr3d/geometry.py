"""Camera geometry: depth unprojection, coordinate pooling, positional encoding.

World coordinates follow the usual pinhole model. For a pixel (u, v) with
depth z, intrinsics K and camera-to-world extrinsics T:

    p_cam   = z * K^-1 @ (u, v, 1)
    p_world = (T @ (p_cam, 1))[:3]

(u, v) index the pixel grid directly; there is no half-pixel offset.
Cells with non-positive or non-finite depth are marked invalid and carry
zero coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor_io import Tensor


@dataclass(frozen=True)
class CoordinateMap:
    """Per-cell world coordinates plus a validity mask."""

    coords: np.ndarray  # (R, C, 3) float64
    valid: np.ndarray   # (R, C) bool

    def __post_init__(self):
        if self.coords.ndim != 3 or self.coords.shape[2] != 3:
            raise ShapeError(f"coords must be (R, C, 3), got {self.coords.shape}")
        if self.valid.shape != self.coords.shape[:2]:
            raise ShapeError(
                f"valid mask {self.valid.shape} does not match coords {self.coords.shape[:2]}"
            )

    @property
    def dims(self):
        return self.coords.shape[:2]

    def to_tensor(self) -> Tensor:
        """Pack as (R, C, 4): xyz plus validity as 0/1."""
        packed = np.concatenate(
            [self.coords, self.valid.astype(np.float64)[..., None]], axis=2
        )
        return Tensor.from_array(packed, dtype="f64")

    @classmethod
    def from_tensor(cls, t: Tensor) -> "CoordinateMap":
        arr = t.asarray()
        if arr.ndim != 3 or arr.shape[2] != 4:
            raise ShapeError(f"coordinate tensors must be (R, C, 4), got {t.dims}")
        return cls(
            coords=np.ascontiguousarray(arr[..., :3], dtype=np.float64),
            valid=arr[..., 3] > 0.5,
        )


def _depth_array(depth) -> np.ndarray:
    if isinstance(depth, Tensor):
        depth = depth.asarray()
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ShapeError(f"depth must be 2-D, got shape {depth.shape}")
    return depth


def unproject_pixel(u, v, depth, intrinsics, extrinsics):
    """World coordinates of one pixel, or None when the depth is invalid."""
    if not (math.isfinite(depth) and depth > 0):
        return None
    K = np.asarray(intrinsics, dtype=np.float64)
    T = np.asarray(extrinsics, dtype=np.float64)
    ray = np.linalg.inv(K) @ np.array([u, v, 1.0])
    cam = depth * ray
    world = T @ np.array([cam[0], cam[1], cam[2], 1.0])
    return world[:3]


def unproject_frame(depth, intrinsics, extrinsics) -> CoordinateMap:
    """Unproject a full depth map at pixel resolution."""
    d = _depth_array(depth)
    H, W = d.shape
    K = np.asarray(intrinsics, dtype=np.float64)
    T = np.asarray(extrinsics, dtype=np.float64)
    Kinv = np.linalg.inv(K)

    us, vs = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    pix = np.stack([us.reshape(-1), vs.reshape(-1), np.ones(H * W)], axis=0)  # (3, HW)
    rays = Kinv @ pix
    cam = rays * d.reshape(1, -1)
    world = T[:3, :3] @ cam + T[:3, 3:4]
    coords = np.ascontiguousarray(world.T.reshape(H, W, 3))
    valid = np.isfinite(d) & (d > 0)
    coords[~valid] = 0.0
    return CoordinateMap(coords=coords, valid=valid)


def pool_coordinates(cm: CoordinateMap, target) -> CoordinateMap:
    """Average valid coordinates over patches down to ``target`` = (R', C').

    A pooled cell is invalid iff its patch contains zero valid cells.
    """
    R, C = cm.dims
    Rt, Ct = int(target[0]), int(target[1])
    if Rt <= 0 or Ct <= 0:
        raise ShapeError(f"target dims must be positive, got {target}")
    if R % Rt != 0 or C % Ct != 0:
        raise ShapeError(f"cannot pool {R}x{C} to {Rt}x{Ct}: non-integer patch factor")
    pr, pc = R // Rt, C // Ct
    masked = np.where(cm.valid[..., None], cm.coords, 0.0)
    sums = masked.reshape(Rt, pr, Ct, pc, 3).sum(axis=(1, 3))
    counts = cm.valid.reshape(Rt, pr, Ct, pc).sum(axis=(1, 3))
    valid = counts > 0
    coords = np.zeros((Rt, Ct, 3))
    np.divide(sums, counts[..., None], out=coords, where=valid[..., None])
    return CoordinateMap(coords=coords, valid=valid)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned bounding box with strictly positive extent per axis."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigError("bbox must be finite")
        if not np.all(hi > lo):
            raise ConfigError(f"bbox must have positive extent per axis, got lo={lo}, hi={hi}")

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo


@dataclass(frozen=True)
class PosEncoding:
    """Sinusoidal encoding of bbox-normalized coordinates.

    ``dim`` must be divisible by 6: dim/6 frequency pairs per axis, output
    laid out axis-major as (sin, cos) pairs. Frequencies run geometrically
    from 2*pi/scale_max up to 2*pi/scale_min.
    """

    dim: int
    scale_min: float
    scale_max: float
    bbox: BBox

    def __post_init__(self):
        if self.dim <= 0 or self.dim % 6 != 0:
            raise ConfigError(f"encoding dim must be a positive multiple of 6, got {self.dim}")
        if not (0 < self.scale_min < self.scale_max):
            raise ConfigError(
                f"scales must satisfy 0 < scale_min < scale_max, got {self.scale_min}, {self.scale_max}"
            )

    def frequencies(self) -> np.ndarray:
        n = self.dim // 6
        lo = 2.0 * math.pi / self.scale_max
        if n == 1:
            return np.array([lo])
        hi = 2.0 * math.pi / self.scale_min
        return lo * (hi / lo) ** (np.arange(n) / (n - 1))


def encode_positions(points, enc: PosEncoding) -> np.ndarray:
    """Encode an (n, 3) batch of points to (n, dim)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"points must be (n, 3), got {pts.shape}")
    unit = (pts - enc.bbox.lo) / enc.bbox.extent
    omegas = enc.frequencies()
    n = pts.shape[0]
    nf = omegas.size
    phase = unit[:, :, None] * omegas[None, None, :]  # (n, 3, nf)
    out = np.empty((n, 3, 2 * nf))
    out[:, :, 0::2] = np.sin(phase)
    out[:, :, 1::2] = np.cos(phase)
    return out.reshape(n, enc.dim)


def encode_position(p, enc: PosEncoding) -> np.ndarray:
    """Encode a single 3-point to a dim-vector."""
    return encode_positions(np.asarray(p, dtype=np.float64).reshape(1, 3), enc)[0]


def inject_position(features, cm: CoordinateMap, enc: PosEncoding) -> np.ndarray:
    """Add the positional encoding of each valid cell's coordinates.

    Invalid cells pass through untouched. Returns a float64 copy.
    """
    feats = features.asarray() if isinstance(features, Tensor) else np.asarray(features)
    if feats.ndim != 3:
        raise ShapeError(f"features must be (R, C, d), got shape {feats.shape}")
    if feats.shape[:2] != cm.dims:
        raise ShapeError(f"feature grid {feats.shape[:2]} does not match coordinate map {cm.dims}")
    if feats.shape[2] != enc.dim:
        raise ShapeError(f"feature dim {feats.shape[2]} does not match encoding dim {enc.dim}")
    out = np.array(feats, dtype=np.float64)
    mask = cm.valid
    if np.any(mask):
        out[mask] += encode_positions(cm.coords[mask], enc)
    return out
