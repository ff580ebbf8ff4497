"""Conformance tests: everything this package emits must be consumable
by the scoring toolkit, so the toolkit itself (installed separately) is
the oracle here. Production code under test never imports it; these
tests do, to prove the file-format contracts hold.
"""

import json
import os
import subprocess
import sys

import numpy as np
import pytest
from numpy.random import default_rng

from corr3d import load_scene, read_tensor, validate_scene

from corr3d_extract import (
    ExtractionJob,
    InputError,
    RegistryError,
    ResolutionError,
    ShapeMismatchError,
    available_models,
    extract,
    get_model,
    read_frames,
    tensor_bytes,
    write_tensor_file,
)
from corr3d_extract.models import ConstantModel

REPO = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

GOLDEN_BYTES = (
    b"C3DTENS\x00"
    + (1).to_bytes(4, "little")
    + (0).to_bytes(4, "little")
    + (1).to_bytes(4, "little")
    + (2).to_bytes(8, "little")
    + np.array([1.5, -2.0], dtype="<f4").tobytes()
)


def _run(module, *args):
    env = dict(os.environ)
    env.pop("CORR3D_THREADS", None)
    return subprocess.run(
        [sys.executable, "-m", module, *args], capture_output=True, env=env
    )


def _write_capture(path, frames, intrinsics):
    os.makedirs(path, exist_ok=True)
    np.savetxt(os.path.join(path, "intrinsics.txt"), intrinsics)
    for fid, depth, pose in frames:
        np.save(os.path.join(path, f"{fid}.depth.npy"), depth)
        np.savetxt(os.path.join(path, f"{fid}.pose.txt"), pose)


def _pose(t):
    m = np.eye(4)
    m[:3, 3] = t
    return m


def _flat_capture(path, n_frames=2, hw=(4, 4)):
    k = np.array([[2.0, 0.0, 1.5], [0.0, 2.0, 1.5], [0.0, 0.0, 1.0]])
    frames = [
        (f"f{i}", np.ones(hw, dtype=np.float32), _pose((0.5 * i, 0.0, 0.0)))
        for i in range(n_frames)
    ]
    _write_capture(path, frames, k)
    return k


def _exact_overlap_capture(path):
    """Two views whose pixel lattices hit identical world points.

    Identity rotations, constant depth, and a lateral shift of exactly one
    pixel's worth of parallax: camera 1's column c sees the same world
    point as camera 0's column c + 1. The shared translation pushes the
    scene far from the origin so same-voxel world points are nearly
    parallel as vectors.
    """
    fx = 7.0
    z = float(np.float32(1.3))  # stored depth is f32; shift must match it
    k = np.array([[fx, 0.0, 4.5], [0.0, fx, 3.5], [0.0, 0.0, 1.0]])
    depth = np.full((8, 10), np.float32(1.3), dtype=np.float32)
    base = np.array([100.0, 100.0, 100.0])
    frames = [
        ("view0", depth, _pose(base)),
        ("view1", depth, _pose(base + np.array([z / fx, 0.0, 0.0]))),
    ]
    _write_capture(path, frames, k)


class TestTensorWriter:
    def test_golden_bytes_from_first_principles(self):
        assert tensor_bytes(np.array([1.5, -2.0], dtype=np.float32)) == GOLDEN_BYTES

    def test_matches_toolkit_golden_fixture_file(self):
        with open(os.path.join(REPO, "fixtures", "golden_f32.c3d"), "rb") as fh:
            assert GOLDEN_BYTES == fh.read()

    def test_toolkit_reads_emitted_tensors_bit_exactly(self, tmp_path):
        rng = default_rng(42)
        for i in range(50):
            dtype = np.float32 if i % 2 == 0 else np.float64
            ndim = int(rng.integers(1, 5))
            dims = tuple(int(d) for d in rng.integers(1, 6, size=ndim))
            arr = rng.standard_normal(dims).astype(dtype)
            path = str(tmp_path / "t.c3d")
            write_tensor_file(arr, path)
            back = read_tensor(path)
            assert back.dims == dims
            assert back.data.tobytes() == arr.tobytes()

    def test_rejects_unsupported_dtypes(self):
        with pytest.raises(ValueError, match="float32 or float64"):
            tensor_bytes(np.array([1, 2], dtype=np.int32))
        with pytest.raises(ValueError, match="0-d"):
            tensor_bytes(np.array(1.0))


class TestInputReaders:
    def test_reads_frames_sorted_by_id(self, tmp_path):
        _flat_capture(str(tmp_path), n_frames=3)
        frames = read_frames(str(tmp_path))
        assert [f.id for f in frames] == ["f0", "f1", "f2"]
        assert frames[0].depth.dtype == np.float32
        assert frames[2].pose[0, 3] == 1.0

    def test_empty_capture_rejected(self, tmp_path):
        with pytest.raises(InputError, match="no .*depth"):
            read_frames(str(tmp_path))

    def test_missing_pose_names_the_frame(self, tmp_path):
        _flat_capture(str(tmp_path))
        os.remove(tmp_path / "f1.pose.txt")
        with pytest.raises(InputError, match="'f1'"):
            read_frames(str(tmp_path))

    def test_mismatched_depth_shapes_rejected(self, tmp_path):
        _flat_capture(str(tmp_path))
        np.save(tmp_path / "f1.depth.npy", np.ones((6, 4), dtype=np.float32))
        with pytest.raises(InputError, match=r"\(6, 4\).*\(4, 4\)"):
            read_frames(str(tmp_path))

    def test_integer_depth_rejected(self, tmp_path):
        _flat_capture(str(tmp_path))
        np.save(tmp_path / "f0.depth.npy", np.ones((4, 4), dtype=np.int32))
        with pytest.raises(InputError, match="floating point"):
            read_frames(str(tmp_path))


class TestRegistry:
    def test_lists_both_stubs(self):
        assert available_models() == ["constant", "coordproj"]

    def test_unknown_model_names_the_alternatives(self):
        with pytest.raises(RegistryError, match="constant, coordproj"):
            get_model("dinov2")


class TestResolutionRule:
    def test_non_divisor_error_names_both_shapes(self, tmp_path):
        _flat_capture(str(tmp_path / "cap"))
        job = ExtractionJob(model="constant", input_dir=str(tmp_path / "cap"),
                            out_dir=str(tmp_path / "out"), resolution=(3, 3))
        with pytest.raises(ResolutionError, match="3x3.*4x4"):
            extract(job)

    def test_divisor_resolution_pools_the_grid(self, tmp_path):
        _flat_capture(str(tmp_path / "cap"))
        job = ExtractionJob(model="constant", input_dir=str(tmp_path / "cap"),
                            out_dir=str(tmp_path / "out"), resolution=(2, 2))
        scene = load_scene(extract(job))
        assert scene.frames[0].features.dims == (2, 2, 8)
        assert scene.frames[0].depth.dims == (4, 4)

    def test_model_shape_mismatch_names_both(self, tmp_path, monkeypatch):
        _flat_capture(str(tmp_path / "cap"))
        monkeypatch.setattr(
            ConstantModel, "features",
            lambda self, frame, k, out_hw, layer: np.ones((1, 1, 8), dtype=np.float32),
        )
        job = ExtractionJob(model="constant", input_dir=str(tmp_path / "cap"),
                            out_dir=str(tmp_path / "out"))
        with pytest.raises(ShapeMismatchError, match=r"\(1, 1, 8\).*\(4, 4, 8\)"):
            extract(job)


class TestToolkitConformance:
    def test_constant_scene_loads_with_clean_validation(self, tmp_path):
        _flat_capture(str(tmp_path / "cap"))
        manifest = extract(ExtractionJob(model="constant",
                                         input_dir=str(tmp_path / "cap"),
                                         out_dir=str(tmp_path / "out")))
        scene = load_scene(manifest)
        report = validate_scene(scene)
        assert report.ok
        assert len(report.issues) == 0
        assert len(scene.frames) == 2
        np.testing.assert_array_equal(scene.frames[0].features.asarray(), 1.0)

    def test_coordproj_scene_loads_with_clean_validation(self, tmp_path):
        _exact_overlap_capture(str(tmp_path / "cap"))
        manifest = extract(ExtractionJob(model="coordproj",
                                         input_dir=str(tmp_path / "cap"),
                                         out_dir=str(tmp_path / "out")))
        report = validate_scene(load_scene(manifest))
        assert report.ok and len(report.issues) == 0

    def test_coordproj_scores_near_one_through_the_toolkit_cli(self, tmp_path):
        _exact_overlap_capture(str(tmp_path / "cap"))
        run = _run("corr3d_extract", "--model", "coordproj",
                   "--input", str(tmp_path / "cap"), "--out", str(tmp_path / "out"))
        assert run.returncode == 0, run.stderr
        manifest = json.loads(run.stdout)["manifest"]
        score = _run("corr3d", "score", "--scene", manifest, "--voxel-size", "0.1")
        assert score.returncode == 0, score.stderr
        report = json.loads(score.stdout)
        assert report["score"] > 0.99
        assert report["pair_count"] >= 8


class TestDeterminism:
    def _tree(self, root):
        return {
            name: (root / name).read_bytes() for name in sorted(os.listdir(root))
        }

    def test_repeat_runs_are_byte_identical(self, tmp_path):
        _exact_overlap_capture(str(tmp_path / "cap"))
        trees = []
        for tag in ("a", "b"):
            run = _run("corr3d_extract", "--model", "coordproj",
                       "--input", str(tmp_path / "cap"),
                       "--out", str(tmp_path / tag))
            assert run.returncode == 0, run.stderr
            trees.append(self._tree(tmp_path / tag))
        assert trees[0] == trees[1]

    def test_deterministic_flag_changes_nothing_for_stubs(self, tmp_path):
        _flat_capture(str(tmp_path / "cap"))
        base_args = ("--model", "constant", "--input", str(tmp_path / "cap"))
        a = _run("corr3d_extract", *base_args, "--out", str(tmp_path / "a"))
        b = _run("corr3d_extract", *base_args, "--out", str(tmp_path / "b"),
                 "--deterministic")
        assert a.returncode == 0 and b.returncode == 0
        assert self._tree(tmp_path / "a") == self._tree(tmp_path / "b")

    def test_layer_reseeds_coordproj_weights(self, tmp_path):
        _exact_overlap_capture(str(tmp_path / "cap"))
        feats = []
        for layer in ("0", "1", "1"):
            out = tmp_path / f"l{layer}_{len(feats)}"
            run = _run("corr3d_extract", "--model", "coordproj",
                       "--input", str(tmp_path / "cap"), "--out", str(out),
                       "--layer", layer)
            assert run.returncode == 0, run.stderr
            feats.append((out / "view0_features.c3d").read_bytes())
        assert feats[0] != feats[1]
        assert feats[1] == feats[2]


class TestCliErrors:
    def test_unknown_model_is_exit_2_json(self, tmp_path):
        _flat_capture(str(tmp_path / "cap"))
        run = _run("corr3d_extract", "--model", "nope",
                   "--input", str(tmp_path / "cap"), "--out", str(tmp_path / "out"))
        assert run.returncode == 2
        err = json.loads(run.stderr)
        assert err["type"] == "RegistryError"
        assert not run.stdout

    def test_bad_resolution_argument_is_exit_2(self, tmp_path):
        run = _run("corr3d_extract", "--model", "constant", "--input", str(tmp_path),
                   "--out", str(tmp_path / "out"), "--resolution", "fourxfour")
        assert run.returncode == 2

    def test_missing_input_directory_is_exit_2(self, tmp_path):
        run = _run("corr3d_extract", "--model", "constant",
                   "--input", str(tmp_path / "missing"),
                   "--out", str(tmp_path / "out"))
        assert run.returncode == 2
        assert json.loads(run.stderr)["type"] == "InputError"

    def test_success_summary_is_one_json_line(self, tmp_path):
        _flat_capture(str(tmp_path / "cap"))
        run = _run("corr3d_extract", "--model", "constant",
                   "--input", str(tmp_path / "cap"), "--out", str(tmp_path / "out"))
        assert run.returncode == 0
        assert run.stdout.count(b"\n") == 1
        doc = json.loads(run.stdout)
        assert doc["command"] == "extract"
        assert doc["frames"] == 2
        assert not run.stderr
