"""Voxel hashing and cross-view pair mining.

Cells whose pooled world coordinates land in the same voxel but come from
different frames form positive pairs; cells from different voxels form
negatives. All enumeration and sampling is deterministic: iteration runs
over sorted voxel keys, and sampling RNGs are seeded per voxel (or per
anchor) so results never depend on scheduling or thread count.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, EmptySceneError, NoNegativesError
from .geometry import CoordinateMap, pool_coordinates, unproject_frame

# Keys are offset into the non-negative range before seeding RNGs.
_SEED_OFFSET = 2**31


class VoxelKey(NamedTuple):
    ix: int
    iy: int
    iz: int


class Entry(NamedTuple):
    """A grid occupant: feature cell ``cell`` (row-major) of frame ``frame``."""

    frame: int
    cell: int


class Pair(NamedTuple):
    frame_a: int
    cell_a: int
    frame_b: int
    cell_b: int
    voxel_a: VoxelKey
    voxel_b: VoxelKey


def voxel_index(p, voxel_size: float, origin) -> VoxelKey:
    """Half-open voxel key: floor((p - origin) / voxel_size) per axis."""
    if not voxel_size > 0:
        raise ConfigError(f"voxel_size must be > 0, got {voxel_size}")
    p = np.asarray(p, dtype=np.float64)
    o = np.asarray(origin, dtype=np.float64)
    q = np.floor((p - o) / voxel_size)
    return VoxelKey(int(q[0]), int(q[1]), int(q[2]))


@dataclass
class VoxelGrid:
    voxel_size: float
    origin: np.ndarray
    cells: dict = field(default_factory=dict)  # VoxelKey -> list[Entry]

    @property
    def total_entries(self) -> int:
        return sum(len(v) for v in self.cells.values())

    def sorted_keys(self) -> list:
        return sorted(self.cells.keys())


def build_voxel_grid(coord_maps, voxel_size: float) -> VoxelGrid:
    """Bucket every valid cell of every frame into voxels.

    The origin is the componentwise minimum over all valid coordinates, so
    keys are translation-independent up to a common shift. Entries within a
    voxel are ordered by (frame, cell).
    """
    if not voxel_size > 0:
        raise ConfigError(f"voxel_size must be > 0, got {voxel_size}")
    all_valid = [cm.coords[cm.valid] for cm in coord_maps]
    stacked = np.concatenate(all_valid, axis=0) if all_valid else np.zeros((0, 3))
    if stacked.shape[0] == 0:
        raise EmptySceneError("no valid cells in any frame")
    origin = stacked.min(axis=0)

    grid = VoxelGrid(voxel_size=float(voxel_size), origin=origin, cells={})
    for fi, cm in enumerate(coord_maps):
        R, C = cm.dims
        flat_valid = cm.valid.reshape(-1)
        idx = np.nonzero(flat_valid)[0]
        if idx.size == 0:
            continue
        pts = cm.coords.reshape(-1, 3)[idx]
        keys = np.floor((pts - origin) / voxel_size).astype(np.int64)
        for cell, (ix, iy, iz) in zip(idx.tolist(), keys.tolist()):
            key = VoxelKey(ix, iy, iz)
            grid.cells.setdefault(key, []).append(Entry(fi, cell))
    return grid


@dataclass(frozen=True)
class PairMode:
    """How a pair set was produced; serialized with reports for provenance."""

    kind: str  # "exhaustive" | "sampled"
    seed: int | None = None
    budget: int | None = None        # positives: max pairs per voxel
    per_anchor: int | None = None    # negatives: partners per entry

    def __post_init__(self):
        if self.kind not in ("exhaustive", "sampled"):
            raise ConfigError(f"pair mode must be exhaustive or sampled, got {self.kind!r}")
        if self.kind == "sampled" and (self.seed is None or self.seed < 0):
            raise ConfigError("sampled mode requires a non-negative seed")

    def describe(self) -> str:
        if self.kind == "exhaustive":
            return "exhaustive"
        parts = [f"sampled(seed={self.seed}"]
        if self.budget is not None:
            parts.append(f", budget={self.budget}")
        if self.per_anchor is not None:
            parts.append(f", per_anchor={self.per_anchor}")
        return "".join(parts) + ")"


CSV_HEADER = ["kind", "frame_a", "cell_a", "frame_b", "cell_b", "voxel_a", "voxel_b"]


@dataclass
class PairSet:
    kind: str  # "positive" | "negative"
    pairs: list
    mode: PairMode

    def __len__(self):
        return len(self.pairs)

    def index_array(self) -> np.ndarray:
        """(n_pairs, 4) int64 [frame_a, cell_a, frame_b, cell_b] in pair order.

        Memoized; pair lists are treated as immutable once built.
        """
        cached = getattr(self, "_idx", None)
        if cached is None or cached.shape[0] != len(self.pairs):
            cached = np.array(
                [[p.frame_a, p.cell_a, p.frame_b, p.cell_b] for p in self.pairs],
                dtype=np.int64,
            ).reshape(len(self.pairs), 4)
            self._idx = cached
        return cached

    def scatter_plan(self, n_cells: int):
        """Plan for summing per-pair contributions into (frame, cell) rows.

        Returns (perm, starts, unique_rows): a stable permutation that
        groups the concatenated [a-side; b-side] contribution rows by
        flattened row index frame * n_cells + cell, reduceat boundaries,
        and the row each group lands in. Memoized per cell count; stable
        ordering keeps the float accumulation order fixed.
        """
        cached = getattr(self, "_scatter", None)
        if cached is not None and cached[0] == n_cells:
            return cached[1], cached[2], cached[3]
        idx = self.index_array()
        rows = np.concatenate([idx[:, 0] * n_cells + idx[:, 1], idx[:, 2] * n_cells + idx[:, 3]])
        perm = np.argsort(rows, kind="stable")
        sorted_rows = rows[perm]
        starts = np.flatnonzero(np.r_[True, sorted_rows[1:] != sorted_rows[:-1]])
        unique_rows = sorted_rows[starts]
        self._scatter = (n_cells, perm, starts, unique_rows)
        return perm, starts, unique_rows

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for p in self.pairs:
            w.writerow(
                [
                    self.kind,
                    p.frame_a,
                    p.cell_a,
                    p.frame_b,
                    p.cell_b,
                    f"{p.voxel_a.ix}:{p.voxel_a.iy}:{p.voxel_a.iz}",
                    f"{p.voxel_b.ix}:{p.voxel_b.iy}:{p.voxel_b.iz}",
                ]
            )

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def _voxel_rng(seed: int, key: VoxelKey, extra=None):
    entropy = [seed, key.ix + _SEED_OFFSET, key.iy + _SEED_OFFSET, key.iz + _SEED_OFFSET]
    if extra is not None:
        entropy.append(extra)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def enumerate_positive_pairs(grid: VoxelGrid, mode: PairMode) -> PairSet:
    """All (or a per-voxel sample of) unordered cross-frame pairs per voxel.

    Sampled sets are exact subsets of the exhaustive set: candidates are
    enumerated in canonical order and indices are drawn without replacement
    from an RNG seeded by (seed, voxel key), so any scheduling yields the
    same pairs.
    """
    pairs = []
    for key in grid.sorted_keys():
        entries = grid.cells[key]
        candidates = []
        for i in range(len(entries)):
            for j in range(i + 1, len(entries)):
                if entries[i].frame != entries[j].frame:
                    a, b = entries[i], entries[j]
                    candidates.append(Pair(a.frame, a.cell, b.frame, b.cell, key, key))
        if mode.kind == "sampled" and mode.budget is not None and len(candidates) > mode.budget:
            rng = _voxel_rng(mode.seed, key)
            chosen = rng.choice(len(candidates), size=mode.budget, replace=False)
            candidates = [candidates[i] for i in sorted(chosen.tolist())]
        pairs.extend(candidates)
    return PairSet(kind="positive", pairs=pairs, mode=mode)


def enumerate_negative_pairs(grid: VoxelGrid, limit: int | None = 10_000) -> PairSet:
    """Every unordered cross-voxel pair. Intended for small grids only."""
    keys = grid.sorted_keys()
    if len(keys) < 2:
        raise NoNegativesError("negative pairs require at least two occupied voxels")
    sizes = [len(grid.cells[k]) for k in keys]
    total = grid.total_entries
    n_pairs = (total * total - sum(s * s for s in sizes)) // 2
    if limit is not None and n_pairs > limit:
        raise ConfigError(
            f"exhaustive negative enumeration would produce {n_pairs} pairs "
            f"(limit {limit}); use sampling instead"
        )
    pairs = []
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            for a in grid.cells[keys[i]]:
                for b in grid.cells[keys[j]]:
                    pairs.append(Pair(a.frame, a.cell, b.frame, b.cell, keys[i], keys[j]))
    return PairSet(kind="negative", pairs=pairs, mode=PairMode(kind="exhaustive"))


def sample_negative_pairs(grid: VoxelGrid, count_per_anchor: int, seed: int) -> PairSet:
    """Per-entry uniform sampling of partners from all other voxels.

    Each anchor entry gets its own RNG seeded by (seed, anchor voxel key,
    anchor position within the voxel), so the result is independent of any
    parallel schedule. Duplicate unordered pairs are dropped, keeping the
    first occurrence in anchor order.
    """
    if count_per_anchor < 1:
        raise ConfigError(f"count_per_anchor must be >= 1, got {count_per_anchor}")
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    keys = grid.sorted_keys()
    if len(keys) < 2:
        raise NoNegativesError("negative pairs require at least two occupied voxels")

    flat_entries = []  # (key_rank, Entry) in sorted-key order
    spans = {}
    for rank, key in enumerate(keys):
        spans[key] = (len(flat_entries), len(grid.cells[key]))
        flat_entries.extend((key, e) for e in grid.cells[key])
    total = len(flat_entries)

    pairs = []
    seen = set()
    for key in keys:
        start, size = spans[key]
        outside = total - size
        take = min(count_per_anchor, outside)
        for a_idx, anchor in enumerate(grid.cells[key]):
            rng = _voxel_rng(seed, key, extra=a_idx)
            picks = rng.choice(outside, size=take, replace=False)
            for r in sorted(picks.tolist()):
                g = r if r < start else r + size
                other_key, other = flat_entries[g]
                canon = tuple(sorted([(anchor.frame, anchor.cell), (other.frame, other.cell)]))
                if canon in seen:
                    continue
                seen.add(canon)
                pairs.append(
                    Pair(anchor.frame, anchor.cell, other.frame, other.cell, key, other_key)
                )
    mode = PairMode(kind="sampled", seed=seed, per_anchor=count_per_anchor)
    return PairSet(kind="negative", pairs=pairs, mode=mode)


def pooled_coordinate_maps(scene) -> list:
    """Unproject every frame and pool coordinates to feature resolution."""
    maps = []
    for fr in scene.frames:
        cm = unproject_frame(fr.depth, fr.intrinsics, fr.extrinsics)
        FH, FW, _ = fr.features.dims
        maps.append(pool_coordinates(cm, (FH, FW)))
    return maps


def scene_voxel_grid(scene, coord_maps=None) -> VoxelGrid:
    """Voxel grid over a scene's pooled feature-cell coordinates."""
    if coord_maps is None:
        coord_maps = pooled_coordinate_maps(scene)
    return build_voxel_grid(coord_maps, scene.voxel_size)
