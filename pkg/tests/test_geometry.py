"""Tests for unprojection, pooling, and positional encoding.

The unprojection oracle below is written with scalar arithmetic and a
cofactor-expansion 3x3 inverse so it shares no code path with the
vectorized implementation under test.
"""

import math

import numpy as np
import pytest

from corr3d import (
    BBox,
    ConfigError,
    CoordinateMap,
    PosEncoding,
    ShapeError,
    Tensor,
    encode_position,
    encode_positions,
    inject_position,
    pool_coordinates,
    unproject_frame,
    unproject_pixel,
)


def _inv3(m):
    """3x3 inverse by cofactor expansion, plain floats."""
    a, b, c = m[0][0], m[0][1], m[0][2]
    d, e, f = m[1][0], m[1][1], m[1][2]
    g, h, i = m[2][0], m[2][1], m[2][2]
    c11 = e * i - f * h
    c12 = -(d * i - f * g)
    c13 = d * h - e * g
    det = a * c11 + b * c12 + c * c13
    adj = [
        [c11, -(b * i - c * h), b * f - c * e],
        [c12, a * i - c * g, -(a * f - c * d)],
        [c13, -(a * h - b * g), a * e - b * d],
    ]
    return [[adj[r][s] / det for s in range(3)] for r in range(3)]


def _oracle_unproject(u, v, z, K, T):
    """Scalar pinhole unprojection: p = T @ (z * K^-1 (u, v, 1), 1)."""
    Ki = _inv3(K)
    rx = Ki[0][0] * u + Ki[0][1] * v + Ki[0][2]
    ry = Ki[1][0] * u + Ki[1][1] * v + Ki[1][2]
    rz = Ki[2][0] * u + Ki[2][1] * v + Ki[2][2]
    cam = (z * rx, z * ry, z * rz)
    out = []
    for r in range(3):
        acc = T[r][3]
        for s in range(3):
            acc += T[r][s] * cam[s]
        out.append(acc)
    return out


def _oracle_project(p, K, T):
    """Scalar projection back to pixel coordinates via the rigid inverse."""
    # world-to-cam for T = [R | t]: R^T, -R^T t
    dx = p[0] - T[0][3]
    dy = p[1] - T[1][3]
    dz = p[2] - T[2][3]
    cam = [
        T[0][0] * dx + T[1][0] * dy + T[2][0] * dz,
        T[0][1] * dx + T[1][1] * dy + T[2][1] * dz,
        T[0][2] * dx + T[1][2] * dy + T[2][2] * dz,
    ]
    px = K[0][0] * cam[0] + K[0][1] * cam[1] + K[0][2] * cam[2]
    py = K[1][0] * cam[0] + K[1][1] * cam[1] + K[1][2] * cam[2]
    pz = K[2][0] * cam[0] + K[2][1] * cam[1] + K[2][2] * cam[2]
    return px / pz, py / pz, cam[2]


def _random_camera(rng):
    """Random intrinsics and a random rigid camera-to-world transform."""
    fx, fy = rng.uniform(40.0, 400.0, size=2)
    cx, cy = rng.uniform(5.0, 50.0, size=2)
    K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    t = rng.uniform(-5.0, 5.0, size=3)
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    return K, T


class TestUnprojectPixel:
    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            K, T = _random_camera(rng)
            u = float(rng.integers(0, 64))
            v = float(rng.integers(0, 48))
            z = float(rng.uniform(0.1, 20.0))
            got = unproject_pixel(u, v, z, K, T)
            want = _oracle_unproject(u, v, z, K.tolist(), T.tolist())
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_reprojection_round_trip(self):
        """unproject then project returns the source pixel and depth."""
        rng = np.random.default_rng(42)
        for _ in range(200):
            K, T = _random_camera(rng)
            u = float(rng.integers(0, 64))
            v = float(rng.integers(0, 48))
            z = float(rng.uniform(0.1, 20.0))
            p = unproject_pixel(u, v, z, K, T)
            u2, v2, z2 = _oracle_project(p, K.tolist(), T.tolist())
            assert abs(u2 - u) < 1e-8
            assert abs(v2 - v) < 1e-8
            assert abs(z2 - z) < 1e-8

    def test_identity_camera_center_pixel(self):
        # K = I, T = I: pixel (0, 0) at depth z lands on (0, 0, z)
        got = unproject_pixel(0, 0, 2.5, np.eye(3), np.eye(4))
        np.testing.assert_allclose(got, [0.0, 0.0, 2.5], atol=1e-15)

    def test_invalid_depths_return_none(self):
        K, T = np.eye(3), np.eye(4)
        assert unproject_pixel(1, 1, 0.0, K, T) is None
        assert unproject_pixel(1, 1, -1.0, K, T) is None
        assert unproject_pixel(1, 1, float("nan"), K, T) is None
        assert unproject_pixel(1, 1, float("inf"), K, T) is None


class TestUnprojectFrame:
    def test_matches_per_pixel_route(self):
        """The vectorized frame path must agree with pixel-by-pixel calls."""
        rng = np.random.default_rng(42)
        for _ in range(10):
            K, T = _random_camera(rng)
            depth = rng.uniform(0.5, 5.0, size=(6, 7))
            cm = unproject_frame(depth, K, T)
            for v in range(6):
                for u in range(7):
                    want = unproject_pixel(u, v, depth[v, u], K, T)
                    np.testing.assert_allclose(
                        cm.coords[v, u], want, rtol=1e-10, atol=1e-10
                    )
            assert cm.valid.all()

    def test_invalid_cells_zeroed_and_masked(self):
        rng = np.random.default_rng(7)
        K, T = _random_camera(rng)
        depth = rng.uniform(0.5, 5.0, size=(4, 5))
        depth[0, 0] = 0.0
        depth[1, 2] = -3.0
        depth[3, 4] = np.nan
        cm = unproject_frame(depth, K, T)
        for r, c in [(0, 0), (1, 2), (3, 4)]:
            assert not cm.valid[r, c]
            np.testing.assert_array_equal(cm.coords[r, c], 0.0)
        assert cm.valid.sum() == 4 * 5 - 3

    def test_accepts_tensor_depth(self):
        depth = Tensor.from_array(np.full((2, 2), 1.0, dtype=np.float32))
        cm = unproject_frame(depth, np.eye(3), np.eye(4))
        assert cm.valid.all()

    def test_rejects_non_2d_depth(self):
        with pytest.raises(ShapeError):
            unproject_frame(np.zeros((2, 2, 2)), np.eye(3), np.eye(4))


class TestCoordinateMapTensor:
    def test_round_trip(self):
        rng = np.random.default_rng(42)
        coords = rng.normal(size=(3, 4, 3))
        valid = rng.uniform(size=(3, 4)) > 0.3
        coords[~valid] = 0.0
        cm = CoordinateMap(coords=coords, valid=valid)
        t = cm.to_tensor()
        assert t.dims == (3, 4, 4)
        back = CoordinateMap.from_tensor(t)
        np.testing.assert_array_equal(back.coords, cm.coords)
        np.testing.assert_array_equal(back.valid, cm.valid)

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            CoordinateMap(coords=np.zeros((2, 2)), valid=np.zeros((2, 2), bool))
        with pytest.raises(ShapeError):
            CoordinateMap(coords=np.zeros((2, 2, 3)), valid=np.zeros((2, 3), bool))
        with pytest.raises(ShapeError):
            CoordinateMap.from_tensor(Tensor.from_array(np.zeros((2, 2, 3))))


class TestPoolCoordinates:
    def _oracle_pool(self, cm, target):
        R, C = cm.dims
        Rt, Ct = target
        pr, pc = R // Rt, C // Ct
        coords = np.zeros((Rt, Ct, 3))
        valid = np.zeros((Rt, Ct), dtype=bool)
        for i in range(Rt):
            for j in range(Ct):
                acc, k = [0.0, 0.0, 0.0], 0
                for di in range(pr):
                    for dj in range(pc):
                        r, c = i * pr + di, j * pc + dj
                        if cm.valid[r, c]:
                            k += 1
                            for ax in range(3):
                                acc[ax] += cm.coords[r, c, ax]
                if k > 0:
                    valid[i, j] = True
                    coords[i, j] = [a / k for a in acc]
        return coords, valid

    def test_matches_patch_loop_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            cm = CoordinateMap(
                coords=rng.normal(size=(6, 8, 3)),
                valid=rng.uniform(size=(6, 8)) > 0.4,
            )
            got = pool_coordinates(cm, (3, 4))
            want_coords, want_valid = self._oracle_pool(cm, (3, 4))
            np.testing.assert_array_equal(got.valid, want_valid)
            np.testing.assert_allclose(got.coords, want_coords, rtol=1e-12, atol=1e-12)

    def test_all_invalid_patch_is_invalid_with_zero_coords(self):
        cm = CoordinateMap(coords=np.ones((2, 2, 3)), valid=np.zeros((2, 2), bool))
        out = pool_coordinates(cm, (1, 1))
        assert not out.valid[0, 0]
        np.testing.assert_array_equal(out.coords, 0.0)

    def test_identity_pool(self):
        rng = np.random.default_rng(3)
        cm = CoordinateMap(coords=rng.normal(size=(3, 3, 3)), valid=np.ones((3, 3), bool))
        out = pool_coordinates(cm, (3, 3))
        np.testing.assert_array_equal(out.coords, cm.coords)

    def test_non_divisible_target_rejected(self):
        cm = CoordinateMap(coords=np.zeros((4, 4, 3)), valid=np.ones((4, 4), bool))
        with pytest.raises(ShapeError):
            pool_coordinates(cm, (3, 2))


class TestBBox:
    def test_extent(self):
        box = BBox(lo=[0.0, 1.0, -1.0], hi=[2.0, 1.5, 0.0])
        np.testing.assert_allclose(box.extent, [2.0, 0.5, 1.0])

    def test_degenerate_rejected(self):
        with pytest.raises(ConfigError):
            BBox(lo=[0, 0, 0], hi=[1, 0, 1])
        with pytest.raises(ConfigError):
            BBox(lo=[0, 0, 0], hi=[1, 1, np.inf])


class TestPosEncoding:
    def _enc(self, dim=12, smin=0.05, smax=2.0):
        return PosEncoding(
            dim=dim, scale_min=smin, scale_max=smax, bbox=BBox(lo=[0, 0, 0], hi=[1, 2, 4])
        )

    def test_frequency_endpoints(self):
        enc = self._enc(dim=24)
        freqs = enc.frequencies()
        assert freqs.size == 4
        np.testing.assert_allclose(freqs[0], 2 * math.pi / 2.0, rtol=1e-15)
        np.testing.assert_allclose(freqs[-1], 2 * math.pi / 0.05, rtol=1e-15)
        ratios = freqs[1:] / freqs[:-1]
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)

    def test_single_pair_uses_coarse_scale(self):
        enc = self._enc(dim=6)
        np.testing.assert_allclose(enc.frequencies(), [2 * math.pi / 2.0])

    def test_matches_scalar_oracle(self):
        enc = self._enc(dim=12)
        freqs = enc.frequencies()
        rng = np.random.default_rng(42)
        pts = rng.uniform(-1.0, 3.0, size=(10, 3))
        got = encode_positions(pts, enc)
        for n in range(10):
            want = []
            for ax in range(3):
                unit = (pts[n, ax] - enc.bbox.lo[ax]) / enc.bbox.extent[ax]
                for w in freqs:
                    want.append(math.sin(unit * w))
                    want.append(math.cos(unit * w))
            np.testing.assert_allclose(got[n], want, rtol=1e-12, atol=1e-12)

    def test_single_point_helper(self):
        enc = self._enc()
        p = [0.3, 0.7, 1.1]
        np.testing.assert_array_equal(encode_position(p, enc), encode_positions([p], enc)[0])

    def test_bounded_components(self):
        enc = self._enc(dim=30)
        rng = np.random.default_rng(42)
        out = encode_positions(rng.uniform(-10, 10, size=(100, 3)), enc)
        assert np.all(np.abs(out) <= 1.0 + 1e-12)

    def test_dim_validation(self):
        with pytest.raises(ConfigError):
            self._enc(dim=10)
        with pytest.raises(ConfigError):
            self._enc(dim=0)
        with pytest.raises(ConfigError):
            self._enc(smin=2.0, smax=2.0)

    def test_points_shape_validation(self):
        with pytest.raises(ShapeError):
            encode_positions(np.zeros((5, 2)), self._enc())


class TestInjectPosition:
    def test_adds_encoding_only_on_valid_cells(self):
        rng = np.random.default_rng(42)
        enc = PosEncoding(dim=6, scale_min=0.1, scale_max=1.0, bbox=BBox([0, 0, 0], [1, 1, 1]))
        coords = rng.uniform(size=(2, 3, 3))
        valid = np.array([[True, False, True], [False, True, False]])
        cm = CoordinateMap(coords=np.where(valid[..., None], coords, 0.0), valid=valid)
        feats = rng.normal(size=(2, 3, 6))
        out = inject_position(feats, cm, enc)
        for r in range(2):
            for c in range(3):
                if valid[r, c]:
                    want = feats[r, c] + encode_position(cm.coords[r, c], enc)
                else:
                    want = feats[r, c]
                np.testing.assert_allclose(out[r, c], want, rtol=1e-12, atol=1e-12)

    def test_dim_mismatch_rejected(self):
        enc = PosEncoding(dim=6, scale_min=0.1, scale_max=1.0, bbox=BBox([0, 0, 0], [1, 1, 1]))
        cm = CoordinateMap(coords=np.zeros((1, 1, 3)), valid=np.ones((1, 1), bool))
        with pytest.raises(ShapeError):
            inject_position(np.zeros((1, 1, 8)), cm, enc)
        with pytest.raises(ShapeError):
            inject_position(np.zeros((2, 1, 6)), cm, enc)
