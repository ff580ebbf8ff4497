"""Registry of feature extraction models.

Two stub models ship so the pipeline is testable offline, without
downloading weights; real-model adapters register the same way. Every
model maps one frame to a (H', W', dim) float32 feature grid, where
(H', W') is the requested output resolution and each output cell
corresponds to one patch of input pixels.

``--layer`` selects which internal layer a backbone would be tapped at.
The stubs honor it by reseeding their fixed weights, so different layers
give different (but individually deterministic) features.
"""

import numpy as np

from .errors import RegistryError
from .inputs import FrameInputs

_WEIGHT_SEED = 90210  # fixed: stub "weights" ship with the package


class ConstantModel:
    """All-ones features; the smallest output the manifest format allows."""

    name = "constant"
    feature_dim = 8

    def features(self, frame: FrameInputs, intrinsics, out_hw, layer: int):
        h, w = out_hw
        return np.ones((h, w, self.feature_dim), dtype=np.float32)


class CoordProjModel:
    """Random projection of each patch center's world coordinates.

    The center pixel of every output patch is unprojected with the frame's
    depth, intrinsics and camera-to-world pose; the resulting 3-vector is
    pushed through a fixed seeded (dim, 3) matrix. Cells whose center pixel
    has no valid depth get zero features. Two views of the same surface
    therefore produce near-identical features wherever their geometry
    agrees, which is the property the scoring toolkit measures.
    """

    name = "coordproj"
    feature_dim = 8

    def features(self, frame: FrameInputs, intrinsics, out_hw, layer: int):
        h, w = out_hw
        in_h, in_w = frame.depth.shape
        ph, pw = in_h // h, in_w // w
        rows = np.arange(h) * ph + ph // 2
        cols = np.arange(w) * pw + pw // 2
        depth = frame.depth.astype(np.float64)[np.ix_(rows, cols)]
        valid = np.isfinite(depth) & (depth > 0.0)

        kinv = np.linalg.inv(intrinsics)
        u, v = np.meshgrid(cols.astype(np.float64), rows.astype(np.float64))
        rays = np.stack([u, v, np.ones_like(u)], axis=-1) @ kinv.T
        cam = rays * depth[:, :, None]
        world = cam @ frame.pose[:3, :3].T + frame.pose[:3, 3]
        world[~valid] = 0.0

        proj = default_projection(self.feature_dim, layer)
        return (world @ proj.T).astype(np.float32)


def default_projection(dim: int, layer: int) -> np.ndarray:
    return np.random.default_rng(_WEIGHT_SEED + layer).normal(size=(dim, 3))


_REGISTRY = {m.name: m for m in (ConstantModel, CoordProjModel)}


def available_models() -> list:
    return sorted(_REGISTRY)


def get_model(name: str):
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise RegistryError(
            f"unknown model {name!r}, available: {', '.join(available_models())}"
        )
