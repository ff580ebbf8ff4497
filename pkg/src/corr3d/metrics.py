"""Correspondence scoring and quartile analysis.

The headline number is the mean cosine similarity over a pair set: feature
vectors of cells that share a voxel across frames should agree if the
underlying representation is view-consistent. Accumulation is always
float64 in a fixed pair order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateVectorError,
    EmptyPairsError,
    TooFewSamplesError,
    ValidationError,
)

ZERO_NORM_TOL = 1e-12


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValidationError(f"vectors must have identical dims, got {a.shape} and {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < ZERO_NORM_TOL or nb < ZERO_NORM_TOL:
        raise DegenerateVectorError(f"zero-norm vector (norms {na:.3e}, {nb:.3e})")
    return float(np.clip(float(a @ b) / (na * nb), -1.0, 1.0))


def feature_stack(features) -> np.ndarray:
    """Normalize per-frame feature maps to one (n_frames, n_cells, d) array.

    Accepts a ready-made 3-D array, or a sequence of per-frame maps shaped
    either (R, C, d) or (n_cells, d).
    """
    if isinstance(features, np.ndarray) and features.ndim == 3:
        return np.asarray(features, dtype=np.float64)
    mats = []
    for f in features:
        arr = np.asarray(f.asarray() if hasattr(f, "asarray") else f, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr.reshape(-1, arr.shape[2])
        elif arr.ndim != 2:
            raise ValidationError(f"feature maps must be 2-D or 3-D, got shape {arr.shape}")
        mats.append(arr)
    if not mats:
        raise ValidationError("no feature maps given")
    shape = mats[0].shape
    for m in mats[1:]:
        if m.shape != shape:
            raise ValidationError(f"feature maps disagree in shape: {m.shape} vs {shape}")
    return np.stack(mats, axis=0)


def pair_similarities(pair_set, features) -> np.ndarray:
    """Cosine similarity per pair, in pair order."""
    feats = feature_stack(features)
    if len(pair_set.pairs) == 0:
        return np.zeros(0)
    idx = pair_set.index_array()
    A = feats[idx[:, 0], idx[:, 1]]
    B = feats[idx[:, 2], idx[:, 3]]
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    bad = (na < ZERO_NORM_TOL) | (nb < ZERO_NORM_TOL)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise DegenerateVectorError(
            f"zero-norm feature in pair {k} "
            f"(frames {idx[k, 0]} and {idx[k, 2]}, cells {idx[k, 1]} and {idx[k, 3]})"
        )
    return np.clip(np.einsum("ij,ij->i", A, B) / (na * nb), -1.0, 1.0)


@dataclass(frozen=True)
class ScoreReport:
    scene_id: str
    score: float
    pair_count: int
    mode: str
    voxel_size: float

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "score": self.score,
            "pair_count": self.pair_count,
            "mode": self.mode,
            "voxel_size": self.voxel_size,
        }


def correspondence_score(pair_set, features, scene_id="", voxel_size=0.0) -> ScoreReport:
    """Mean pairwise cosine similarity over a pair set."""
    if len(pair_set.pairs) == 0:
        raise EmptyPairsError("cannot score an empty pair set")
    sims = pair_similarities(pair_set, features)
    return ScoreReport(
        scene_id=scene_id,
        score=float(np.mean(sims, dtype=np.float64)),
        pair_count=len(pair_set.pairs),
        mode=pair_set.mode.describe(),
        voxel_size=float(voxel_size),
    )


@dataclass(frozen=True)
class QuartileBin:
    count: int
    mean_score: float
    mean_metric: float
    ids: tuple

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean_score": self.mean_score,
            "mean_metric": self.mean_metric,
            "ids": list(self.ids),
        }


@dataclass(frozen=True)
class QuartileReport:
    bins: tuple  # 4 QuartileBins, ascending score

    def mean_metrics(self) -> list:
        return [b.mean_metric for b in self.bins]

    def to_dict(self) -> dict:
        return {"bins": [b.to_dict() for b in self.bins]}


def quartile_report(samples) -> QuartileReport:
    """Bin (id, score, metric) samples into four contiguous score quartiles.

    Samples are stably sorted by (score, id); the first n mod 4 bins take
    the extra element when n is not a multiple of 4.
    """
    samples = list(samples)
    n = len(samples)
    if n < 4:
        raise TooFewSamplesError(f"quartile analysis needs >= 4 samples, got {n}")
    for sid, score, metric in samples:
        if not (math.isfinite(score) and math.isfinite(metric)):
            raise ValidationError(f"sample {sid!r} has non-finite score or metric")
    ordered = sorted(samples, key=lambda s: (s[1], s[0]))
    base, rem = divmod(n, 4)
    sizes = [base + 1] * rem + [base] * (4 - rem)
    bins = []
    at = 0
    for size in sizes:
        chunk = ordered[at : at + size]
        at += size
        bins.append(
            QuartileBin(
                count=size,
                mean_score=float(np.mean([c[1] for c in chunk], dtype=np.float64)),
                mean_metric=float(np.mean([c[2] for c in chunk], dtype=np.float64)),
                ids=tuple(c[0] for c in chunk),
            )
        )
    return QuartileReport(bins=tuple(bins))
