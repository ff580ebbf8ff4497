"""Scene manifests and structural validation.

A scene is a JSON manifest plus one tensor file per field. The manifest
schema is strict: unknown keys are rejected at every level so typos fail
loudly instead of silently changing behavior.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError, ValidationError
from .tensor_io import Tensor, read_tensor, write_tensor

MANIFEST_SCHEMA_VERSION = 1
DEFAULT_VOXEL_SIZE = 0.1
DEFAULT_FRAME_BUDGET = 32

_TOP_KEYS = {"schema", "voxel_size", "frame_budget", "frames"}
_FRAME_KEYS = {"id", "depth", "intrinsics", "extrinsics", "features", "teacher_features"}
_FRAME_REQUIRED = {"id", "depth", "intrinsics", "extrinsics", "features"}
_ID_PATTERN = re.compile(r"^[A-Za-z0-9_.-]{1,64}$")

_ROT_TOL = 1e-6
_BOTTOM_ROW_TOL = 1e-9


@dataclass
class FrameRecord:
    """One posed RGB-D frame with its per-view feature maps."""

    id: str
    depth: Tensor
    intrinsics: np.ndarray
    extrinsics: np.ndarray
    features: Tensor
    teacher_features: Tensor | None = None


@dataclass
class Scene:
    frames: list
    voxel_size: float = DEFAULT_VOXEL_SIZE
    frame_budget: int = DEFAULT_FRAME_BUDGET


@dataclass(frozen=True)
class ValidationIssue:
    frame_id: str | None
    field: str
    message: str

    def __str__(self):
        where = self.frame_id if self.frame_id is not None else "<scene>"
        return f"{where}.{self.field}: {self.message}"


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, frame_id, fld, message):
        self.issues.append(ValidationIssue(frame_id, fld, message))

    def summary(self) -> str:
        return "; ".join(str(i) for i in self.issues)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _check_number_list(value, n, where):
    if not isinstance(value, list) or len(value) != n:
        raise SchemaError(f"{where} must be a list of {n} numbers")
    for x in value:
        if not _is_number(x):
            raise SchemaError(f"{where} must contain only numbers")
        if not math.isfinite(x):
            raise SchemaError(f"{where} must contain only finite numbers")


def parse_manifest(doc) -> dict:
    """Validate a parsed manifest document. Returns it unchanged on success."""
    if not isinstance(doc, dict):
        raise SchemaError("manifest must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise SchemaError(f"unknown manifest keys: {sorted(unknown)}")
    if doc.get("schema") != MANIFEST_SCHEMA_VERSION:
        raise SchemaError(
            f'manifest requires "schema": {MANIFEST_SCHEMA_VERSION}, got {doc.get("schema")!r}'
        )
    if "voxel_size" in doc and not _is_number(doc["voxel_size"]):
        raise SchemaError("voxel_size must be a number")
    if "frame_budget" in doc:
        fb = doc["frame_budget"]
        if not isinstance(fb, int) or isinstance(fb, bool):
            raise SchemaError("frame_budget must be an integer")
    frames = doc.get("frames")
    if not isinstance(frames, list):
        raise SchemaError('manifest requires a "frames" list')
    for i, fr in enumerate(frames):
        where = f"frames[{i}]"
        if not isinstance(fr, dict):
            raise SchemaError(f"{where} must be an object")
        unknown = set(fr) - _FRAME_KEYS
        if unknown:
            raise SchemaError(f"{where} has unknown keys: {sorted(unknown)}")
        missing = _FRAME_REQUIRED - set(fr)
        if missing:
            raise SchemaError(f"{where} is missing keys: {sorted(missing)}")
        if not isinstance(fr["id"], str) or not _ID_PATTERN.match(fr["id"]):
            raise SchemaError(f"{where}.id must match {_ID_PATTERN.pattern}")
        for key in ("depth", "features"):
            if not isinstance(fr[key], str) or not fr[key]:
                raise SchemaError(f"{where}.{key} must be a non-empty path string")
        if "teacher_features" in fr and (
            not isinstance(fr["teacher_features"], str) or not fr["teacher_features"]
        ):
            raise SchemaError(f"{where}.teacher_features must be a non-empty path string")
        _check_number_list(fr["intrinsics"], 9, f"{where}.intrinsics")
        _check_number_list(fr["extrinsics"], 16, f"{where}.extrinsics")
    return doc


def subsample_indices(n: int, budget: int) -> list:
    """Evenly spaced frame indices once a scene exceeds its budget.

    Keeps frame floor(k*(n-1)/(budget-1)) for k in [0, budget); identity
    whenever n <= budget, first frame only for a budget of one.
    """
    if n <= budget:
        return list(range(n))
    if budget == 1:
        return [0]
    return [(k * (n - 1)) // (budget - 1) for k in range(budget)]


def load_scene(path) -> Scene:
    """Load and fully validate a scene from a manifest path.

    Frames beyond the manifest's budget are dropped by even subsampling
    after validation, so the same manifest always selects the same frames.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"manifest not found: {path}")
    except json.JSONDecodeError as e:
        raise SchemaError(f"manifest is not valid JSON: {e}")
    parse_manifest(doc)
    base = os.path.dirname(os.path.abspath(path))
    frames = []
    for fr in doc["frames"]:
        frames.append(_load_frame(fr, base))
    scene = Scene(
        frames=frames,
        voxel_size=float(doc.get("voxel_size", DEFAULT_VOXEL_SIZE)),
        frame_budget=int(doc.get("frame_budget", DEFAULT_FRAME_BUDGET)),
    )
    report = validate_scene(scene)
    if not report.ok:
        raise ValidationError(f"invalid scene: {report.summary()}", issues=report.issues)
    keep = subsample_indices(len(scene.frames), scene.frame_budget)
    scene.frames = [scene.frames[i] for i in keep]
    return scene


def _load_frame(fr: dict, base: str) -> FrameRecord:
    def tensor_at(key):
        rel = fr[key]
        p = rel if os.path.isabs(rel) else os.path.join(base, rel)
        if not os.path.exists(p):
            raise ValidationError(f"frame {fr['id']!r}: {key} file not found: {rel}")
        return read_tensor(p)

    teacher = tensor_at("teacher_features") if "teacher_features" in fr else None
    return FrameRecord(
        id=fr["id"],
        depth=tensor_at("depth"),
        intrinsics=np.array(fr["intrinsics"], dtype=np.float64).reshape(3, 3),
        extrinsics=np.array(fr["extrinsics"], dtype=np.float64).reshape(4, 4),
        features=tensor_at("features"),
        teacher_features=teacher,
    )


def validate_scene(scene: Scene) -> ValidationReport:
    """Check every structural invariant; never raises, never mutates."""
    rep = ValidationReport()
    if not scene.frames:
        rep.add(None, "frames", "scene has no frames")
    if not (_is_number(scene.voxel_size) and math.isfinite(scene.voxel_size) and scene.voxel_size > 0):
        rep.add(None, "voxel_size", f"must be a positive finite number, got {scene.voxel_size!r}")
    if scene.frame_budget < 1:
        rep.add(None, "frame_budget", f"must be >= 1, got {scene.frame_budget}")

    seen = {}
    for fr in scene.frames:
        if fr.id in seen:
            rep.add(fr.id, "id", "duplicate frame id")
        seen[fr.id] = True

    ref = scene.frames[0] if scene.frames else None
    any_teacher = any(fr.teacher_features is not None for fr in scene.frames)
    for fr in scene.frames:
        _validate_frame(fr, rep)
        if ref is not None and fr is not ref:
            if fr.depth.dims != ref.depth.dims:
                rep.add(fr.id, "depth", f"dims {fr.depth.dims} differ from {ref.depth.dims}")
            if fr.features.dims != ref.features.dims:
                rep.add(fr.id, "features", f"dims {fr.features.dims} differ from {ref.features.dims}")
        if any_teacher:
            if fr.teacher_features is None:
                rep.add(fr.id, "teacher_features", "missing while other frames have teacher features")
            elif ref is not None and ref.teacher_features is not None and fr is not ref:
                if fr.teacher_features.dims != ref.teacher_features.dims:
                    rep.add(
                        fr.id,
                        "teacher_features",
                        f"dims {fr.teacher_features.dims} differ from {ref.teacher_features.dims}",
                    )
    return rep


def _validate_frame(fr: FrameRecord, rep: ValidationReport):
    if fr.depth.dtype != "f32":
        rep.add(fr.id, "depth", f"dtype must be f32, got {fr.depth.dtype}")
    if len(fr.depth.dims) != 2:
        rep.add(fr.id, "depth", f"must be 2-D, got dims {fr.depth.dims}")
    if len(fr.features.dims) != 3:
        rep.add(fr.id, "features", f"must be 3-D, got dims {fr.features.dims}")
    if fr.teacher_features is not None and len(fr.teacher_features.dims) != 3:
        rep.add(fr.id, "teacher_features", f"must be 3-D, got dims {fr.teacher_features.dims}")

    K = fr.intrinsics
    if K.shape != (3, 3):
        rep.add(fr.id, "intrinsics", f"must be 3x3, got {K.shape}")
    else:
        if not K[0, 0] > 0:
            rep.add(fr.id, "intrinsics", f"fx must be > 0, got {K[0, 0]}")
        if not K[1, 1] > 0:
            rep.add(fr.id, "intrinsics", f"fy must be > 0, got {K[1, 1]}")
        if not (K[2, 0] == 0 and K[2, 1] == 0 and K[2, 2] == 1):
            rep.add(fr.id, "intrinsics", f"bottom row must be (0, 0, 1), got {K[2].tolist()}")

    T = fr.extrinsics
    if T.shape != (4, 4):
        rep.add(fr.id, "extrinsics", f"must be 4x4, got {T.shape}")
    else:
        bottom = np.array([0.0, 0.0, 0.0, 1.0])
        if np.max(np.abs(T[3] - bottom)) > _BOTTOM_ROW_TOL:
            rep.add(fr.id, "extrinsics", f"bottom row must be (0, 0, 0, 1), got {T[3].tolist()}")
        R = T[:3, :3]
        ortho = np.max(np.abs(R.T @ R - np.eye(3)))
        if ortho > _ROT_TOL:
            rep.add(fr.id, "extrinsics", f"rotation not orthonormal (max deviation {ortho:.3e})")
        det = float(np.linalg.det(R))
        if abs(det - 1.0) > _ROT_TOL:
            rep.add(fr.id, "extrinsics", f"rotation determinant must be +1, got {det:.9f}")

    if len(fr.depth.dims) == 2 and len(fr.features.dims) == 3:
        H, W = fr.depth.dims
        FH, FW, _ = fr.features.dims
        if FH > H or FW > W:
            rep.add(fr.id, "features", f"feature grid {FH}x{FW} exceeds depth grid {H}x{W}")
        elif H % FH != 0 or W % FW != 0:
            rep.add(
                fr.id,
                "features",
                f"depth grid {H}x{W} not an integer multiple of feature grid {FH}x{FW}",
            )


def write_scene(scene: Scene, out_dir) -> str:
    """Write tensors plus a manifest under ``out_dir``; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    frames_doc = []
    for fr in scene.frames:
        entry = {
            "id": fr.id,
            "depth": f"{fr.id}_depth.c3d",
            "intrinsics": [float(x) for x in fr.intrinsics.reshape(-1)],
            "extrinsics": [float(x) for x in fr.extrinsics.reshape(-1)],
            "features": f"{fr.id}_features.c3d",
        }
        write_tensor(fr.depth, os.path.join(out_dir, entry["depth"]))
        write_tensor(fr.features, os.path.join(out_dir, entry["features"]))
        if fr.teacher_features is not None:
            entry["teacher_features"] = f"{fr.id}_teacher.c3d"
            write_tensor(fr.teacher_features, os.path.join(out_dir, entry["teacher_features"]))
        frames_doc.append(entry)
    doc = {
        "schema": MANIFEST_SCHEMA_VERSION,
        "voxel_size": scene.voxel_size,
        "frame_budget": scene.frame_budget,
        "frames": frames_doc,
    }
    manifest = os.path.join(out_dir, "scene.json")
    with open(manifest, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return manifest
