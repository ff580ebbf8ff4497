"""Losses over voxel pairs and teacher alignment, with analytic gradients.

Both losses are built from cosine similarity S(a, b) = a.b / (|a||b|),
whose gradient w.r.t. a is b / (|a||b|) - S * a / |a|^2. The
correspondence loss pulls same-voxel pairs together (mean of 1 - S) and
pushes cross-voxel pairs apart (mean of S). The alignment loss drives a
small MLP head on the per-view features toward teacher features pooled to
the same grid, as the negative mean cosine over valid cells.

Gradients are exact and are exercised against central finite differences
in the test suite; every reduction runs in float64 with a fixed order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DegenerateVectorError,
    EmptyMaskError,
    EmptyPairsError,
    SchemaError,
    ShapeError,
)
from .metrics import ZERO_NORM_TOL, feature_stack
from .tensor_io import Tensor, read_tensor, write_tensor


def avg_pool_2d(arr, target) -> np.ndarray:
    """Per-channel patch mean from (R, C, c) down to (R', C', c)."""
    arr = np.asarray(arr.asarray() if isinstance(arr, Tensor) else arr, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"expected (R, C, c) input, got shape {arr.shape}")
    R, C, ch = arr.shape
    Rt, Ct = int(target[0]), int(target[1])
    if Rt <= 0 or Ct <= 0:
        raise ShapeError(f"target dims must be positive, got {target}")
    if R % Rt != 0 or C % Ct != 0:
        raise ShapeError(f"cannot pool {R}x{C} to {Rt}x{Ct}: non-integer patch factor")
    return arr.reshape(Rt, R // Rt, Ct, C // Ct, ch).mean(axis=(1, 3))


@dataclass
class AlignmentMlp:
    """Two-layer head: w2 @ relu(w1 @ f + b1) + b2."""

    w1: np.ndarray  # (hidden, in_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (out_dim, hidden)
    b2: np.ndarray  # (out_dim,)
    activation: str = "relu"
    init_seed: int | None = None

    def __post_init__(self):
        if self.activation != "relu":
            raise ConfigError(f"only relu is supported, got {self.activation!r}")
        h, d = self.w1.shape
        if self.b1.shape != (h,):
            raise ShapeError(f"b1 shape {self.b1.shape} does not match hidden width {h}")
        if self.w2.shape[1] != h:
            raise ShapeError(f"w2 shape {self.w2.shape} does not match hidden width {h}")
        if self.b2.shape != (self.w2.shape[0],):
            raise ShapeError(f"b2 shape {self.b2.shape} does not match out dim {self.w2.shape[0]}")

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def initialize(cls, in_dim, out_dim, hidden=None, seed=0) -> "AlignmentMlp":
        """Random init; hidden width defaults to twice the input dim.

        Hidden biases start at +2 so every rectifier unit is active for
        unit-scale inputs. With all units live the early head is close to
        affine, which keeps feature gradients coherent across cells that
        share a target instead of being scrambled by per-cell gate
        patterns. Descent is free to turn units off later.
        """
        if hidden is None:
            hidden = 2 * in_dim
        if min(in_dim, out_dim, hidden) < 1:
            raise ConfigError(f"dims must be positive, got {(in_dim, hidden, out_dim)}")
        rng = np.random.default_rng(seed)
        return cls(
            w1=rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(hidden, in_dim)),
            b1=np.full(hidden, 2.0),
            w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(out_dim, hidden)),
            b2=np.zeros(out_dim),
            init_seed=seed,
        )

    def forward(self, f) -> np.ndarray:
        """Apply to the last axis of ``f``; works on single vectors or batches."""
        f = np.asarray(f, dtype=np.float64)
        if f.shape[-1] != self.in_dim:
            raise ShapeError(f"input dim {f.shape[-1]} does not match mlp in_dim {self.in_dim}")
        z = f @ self.w1.T + self.b1
        return np.maximum(z, 0.0) @ self.w2.T + self.b2

    def save(self, path):
        """Write JSON meta plus four sibling tensor files."""
        stem, _ = os.path.splitext(path)
        base = os.path.basename(stem)
        names = {}
        for part in ("w1", "b1", "w2", "b2"):
            names[part] = f"{base}_{part}.c3d"
            write_tensor(
                Tensor.from_array(getattr(self, part), dtype="f64"),
                os.path.join(os.path.dirname(os.path.abspath(path)), names[part]),
            )
        meta = {
            "schema": 1,
            "hidden": self.hidden,
            "activation": self.activation,
            "init_seed": self.init_seed,
            "tensors": names,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "AlignmentMlp":
        with open(path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        if not isinstance(meta, dict) or meta.get("schema") != 1:
            raise SchemaError(f"mlp meta must have schema 1, got {meta.get('schema')!r}")
        missing = {"hidden", "activation", "tensors"} - set(meta)
        if missing:
            raise SchemaError(f"mlp meta missing keys: {sorted(missing)}")
        base = os.path.dirname(os.path.abspath(path))
        arrays = {}
        for part in ("w1", "b1", "w2", "b2"):
            rel = meta["tensors"].get(part)
            if not isinstance(rel, str):
                raise SchemaError(f"mlp meta tensors.{part} missing")
            arrays[part] = read_tensor(os.path.join(base, rel)).asarray().astype(np.float64)
        mlp = cls(
            w1=arrays["w1"],
            b1=arrays["b1"],
            w2=arrays["w2"],
            b2=arrays["b2"],
            activation=meta["activation"],
            init_seed=meta.get("init_seed"),
        )
        if mlp.hidden != meta["hidden"]:
            raise SchemaError(
                f"mlp meta hidden {meta['hidden']} does not match tensors ({mlp.hidden})"
            )
        return mlp


@dataclass
class MlpGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros_like(cls, m: AlignmentMlp) -> "MlpGrads":
        return cls(
            w1=np.zeros_like(m.w1),
            b1=np.zeros_like(m.b1),
            w2=np.zeros_like(m.w2),
            b2=np.zeros_like(m.b2),
        )


@dataclass
class LossResult:
    value: float
    grad_features: np.ndarray          # same shape as the input feature stack
    grad_params: MlpGrads | None = None
    info: dict = field(default_factory=dict)


def _pair_cosines_and_grads(feats, grad, pair_set, coef):
    """Accumulate coef * dS/d(feature) for every pair; returns per-pair S.

    ``coef`` already folds in the loss sign and the 1/count normalization.
    """
    idx = pair_set.index_array()
    A = feats[idx[:, 0], idx[:, 1]]
    B = feats[idx[:, 2], idx[:, 3]]
    na2 = np.einsum("ij,ij->i", A, A)
    nb2 = np.einsum("ij,ij->i", B, B)
    bad = (na2 < ZERO_NORM_TOL**2) | (nb2 < ZERO_NORM_TOL**2)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise DegenerateVectorError(
            f"zero-norm feature in {pair_set.kind} pair {k} "
            f"(frames {idx[k, 0]} and {idx[k, 2]}, cells {idx[k, 1]} and {idx[k, 3]})"
        )
    inv = 1.0 / np.sqrt(na2 * nb2)
    s = np.einsum("ij,ij->i", A, B) * inv
    n_pairs = len(s)
    dim = grad.shape[2]
    # both sides written into one buffer so the scatter is a single pass
    contrib = np.empty((2 * n_pairs, dim))
    da, db = contrib[:n_pairs], contrib[n_pairs:]
    np.multiply(B, inv[:, None], out=da)
    da -= (s / na2)[:, None] * A
    da *= coef
    np.multiply(A, inv[:, None], out=db)
    db -= (s / nb2)[:, None] * B
    db *= coef
    # grouped scatter-add; np.add.at is much slower on repeated indices
    perm, starts, unique_rows = pair_set.scatter_plan(grad.shape[1])
    sums = np.add.reduceat(contrib[perm], starts, axis=0)
    grad.reshape(-1, dim)[unique_rows] += sums
    return s


def correspondence_loss(
    positives,
    negatives,
    features,
    weights=(1.0, 1.0),
    allow_empty_negatives=False,
) -> LossResult:
    """Weighted sum of the pull-together and push-apart terms.

    value = w_pos * mean(1 - S) over positives + w_neg * mean(S) over
    negatives. Cells not referenced by any pair keep zero gradient.
    """
    feats = feature_stack(features)
    w_pos, w_neg = float(weights[0]), float(weights[1])
    if len(positives.pairs) == 0:
        raise EmptyPairsError("correspondence loss needs at least one positive pair")
    n_neg = 0 if negatives is None else len(negatives.pairs)
    if n_neg == 0 and not allow_empty_negatives:
        raise EmptyPairsError(
            "correspondence loss needs negative pairs (or allow_empty_negatives)"
        )
    grad = np.zeros_like(feats)
    s_pos = _pair_cosines_and_grads(feats, grad, positives, -w_pos / len(positives.pairs))
    value = w_pos * float(np.mean(1.0 - s_pos, dtype=np.float64))
    neg_term = 0.0
    if n_neg:
        s_neg = _pair_cosines_and_grads(feats, grad, negatives, w_neg / n_neg)
        neg_term = float(np.mean(s_neg, dtype=np.float64))
        value += w_neg * neg_term
    return LossResult(
        value=value,
        grad_features=grad,
        info={
            "positive_pairs": len(positives.pairs),
            "negative_pairs": n_neg,
            "positive_term": float(np.mean(1.0 - s_pos, dtype=np.float64)),
            "negative_term": neg_term,
        },
    )


def alignment_loss(
    student,
    teacher,
    mlp: AlignmentMlp,
    valid,
    normalization="valid",
) -> LossResult:
    """Negative mean cosine between mlp(student) and teacher over valid cells.

    ``teacher`` must already be at the student grid (see ``avg_pool_2d``).
    ``normalization`` picks the denominator: "valid" divides by the number
    of valid cells, "all" by the full cell count (invalid cells contribute
    zero either way).
    """
    feats = feature_stack(student)
    tf = feature_stack(teacher)
    if normalization not in ("valid", "all"):
        raise ConfigError(f"normalization must be valid or all, got {normalization!r}")
    if feats.shape[:2] != tf.shape[:2]:
        raise ShapeError(
            f"student grid {feats.shape[:2]} does not match teacher grid {tf.shape[:2]}"
        )
    mask = np.asarray(valid, dtype=bool)
    if mask.shape != feats.shape[:2]:
        raise ShapeError(f"valid mask {mask.shape} does not match feature grid {feats.shape[:2]}")
    m = int(mask.sum())
    if m == 0:
        raise EmptyMaskError("alignment loss has zero valid cells")
    denom = float(m if normalization == "valid" else feats.shape[0] * feats.shape[1])

    F = feats[mask]  # (m, d)
    T = tf[mask]     # (m, dt)
    z = F @ mlp.w1.T + mlp.b1
    h = np.maximum(z, 0.0)
    u = h @ mlp.w2.T + mlp.b2
    nu = np.linalg.norm(u, axis=1)
    nt = np.linalg.norm(T, axis=1)
    bad = (nu < ZERO_NORM_TOL) | (nt < ZERO_NORM_TOL)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise DegenerateVectorError(f"zero-norm projected or teacher feature at valid cell {k}")
    inv = 1.0 / (nu * nt)
    s = np.einsum("ij,ij->i", u, T) * inv
    value = -float(np.sum(s, dtype=np.float64)) / denom

    gu = (-1.0 / denom) * (T * inv[:, None] - (s / nu**2)[:, None] * u)
    gw2 = gu.T @ h
    gb2 = gu.sum(axis=0)
    gh = gu @ mlp.w2
    gz = gh * (z > 0.0)
    gw1 = gz.T @ F
    gb1 = gz.sum(axis=0)
    gF = gz @ mlp.w1

    grad = np.zeros_like(feats)
    grad[mask] = gF
    return LossResult(
        value=value,
        grad_features=grad,
        grad_params=MlpGrads(w1=gw1, b1=gb1, w2=gw2, b2=gb2),
        info={"valid_cells": m, "normalization": normalization, "mean_cosine": float(np.mean(s))},
    )


def grad_check(fn, x0, eps=1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps an array to (value, gradient). The relative error per
    coordinate is |analytic - numeric| / max(1, |numeric|).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    _, analytic = fn(x0)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    flat = x0.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        xp = flat.copy()
        xp[i] += eps
        fp, _ = fn(xp.reshape(x0.shape))
        xm = flat.copy()
        xm[i] -= eps
        fm, _ = fn(xm.reshape(x0.shape))
        numeric[i] = (fp - fm) / (2.0 * eps)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(np.max(rel)) if rel.size else 0.0
