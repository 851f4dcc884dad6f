"""Unit tests for poses, planes, transforms, and TUM serialization."""

import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from planeba.geometry import (
    CpPlane,
    DegeneratePlaneError,
    GimbalLockError,
    Plane,
    Pose,
    compose,
    cp_to_plane,
    euler_to_rotation,
    fixed_point_to_plane,
    format_tum,
    homogenize,
    invert,
    parse_tum,
    plane_to_cp,
    point_to_plane,
    read_tum,
    rotation_to_euler,
    transform_plane,
    write_tum,
)

from conftest import random_plane, random_pose


class TestEulerRotation:
    def test_identity(self):
        assert np.array_equal(euler_to_rotation([0.0, 0.0, 0.0]), np.eye(3))

    def test_quarter_turn_z_first_row(self):
        R = euler_to_rotation([0.0, 0.0, math.pi / 2])
        assert np.allclose(R[0], [0.0, -1.0, 0.0], atol=1e-15)

    def test_all_nine_entries_symbolic(self):
        # hard-coded closed forms of every entry of Rx Ry Rz
        phi = np.array([0.37, -0.81, 1.94])
        sx, sy, sz = np.sin(phi)
        cx, cy, cz = np.cos(phi)
        expected = np.array([
            [cy * cz, -cy * sz, sy],
            [cx * sz + sx * sy * cz, cx * cz - sx * sy * sz, -sx * cy],
            [sx * sz - cx * sy * cz, cx * sy * sz + sx * cz, cx * cy],
        ])
        assert np.array_equal(euler_to_rotation(phi), expected)

    def test_orthonormal_det_plus_one(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            phi = rng.uniform(-1.4, 1.4, 3)
            R = euler_to_rotation(phi)
            assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-12
            assert abs(np.linalg.det(R) - 1.0) < 1e-12

    def test_matches_quaternion_oracle(self):
        # same axis sequence built through scipy's intrinsic-XYZ quaternions
        rng = np.random.default_rng(1)
        for _ in range(50):
            phi = rng.uniform(-1.4, 1.4, 3)
            oracle = Rotation.from_euler("XYZ", phi).as_matrix()
            assert np.max(np.abs(euler_to_rotation(phi) - oracle)) < 1e-12

    def test_gimbal_band_rejected(self):
        with pytest.raises(GimbalLockError):
            euler_to_rotation([0.0, math.pi / 2, 0.0])
        with pytest.raises(GimbalLockError):
            euler_to_rotation([0.0, -math.pi / 2 + 1e-9, 0.0])

    def test_round_trip_extraction(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            phi = rng.uniform(-1.4, 1.4, 3)
            assert np.allclose(rotation_to_euler(euler_to_rotation(phi)), phi,
                               atol=1e-12)

    def test_extraction_rejects_gimbal(self):
        R = Rotation.from_euler("XYZ", [0.3, math.pi / 2, -0.2]).as_matrix()
        with pytest.raises(GimbalLockError):
            rotation_to_euler(R)


class TestPose:
    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            Pose(np.array([np.nan, 0, 0]), np.zeros(3))
        with pytest.raises(GimbalLockError):
            Pose(np.zeros(3), np.array([0.0, math.pi / 2, 0.0]))
        with pytest.raises(ValueError):
            Pose(np.zeros(2), np.zeros(3))

    def test_matrix_layout(self):
        p = Pose(np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.2, 0.3]))
        M = p.matrix()
        assert np.array_equal(M[:3, :3], p.rotation())
        assert np.array_equal(M[:3, 3], p.t)
        assert np.array_equal(M[3], [0, 0, 0, 1])

    def test_compose_identity(self):
        b = random_pose(np.random.default_rng(3))
        out = compose(Pose.identity(), b)
        assert np.allclose(out.t, b.t, atol=1e-15)
        assert np.allclose(out.phi, b.phi, atol=1e-15)

    def test_compose_with_inverse_is_identity(self):
        a = random_pose(np.random.default_rng(4))
        out = compose(a, invert(a))
        assert np.max(np.abs(out.matrix() - np.eye(4))) < 1e-10

    def test_compose_matches_dense_matrix_product(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a, b = random_pose(rng, angle_scale=0.7), random_pose(rng, angle_scale=0.7)
            assert np.max(np.abs(compose(a, b).matrix() - a.matrix() @ b.matrix())) < 1e-10

    def test_compose_associative(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            a, b, c = (random_pose(rng, angle_scale=0.5) for _ in range(3))
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            assert np.max(np.abs(left.matrix() - right.matrix())) < 1e-9

    def test_invert_trivials(self):
        ident = invert(Pose.identity())
        assert np.allclose(ident.t, 0) and np.allclose(ident.phi, 0)
        p = Pose(np.array([1.0, 2.0, 3.0]), np.zeros(3))
        assert np.allclose(invert(p).t, [-1.0, -2.0, -3.0])

    def test_invert_matrix_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            a = random_pose(rng)
            assert np.max(np.abs(invert(a).matrix() @ a.matrix() - np.eye(4))) < 1e-10


class TestPlaneDistances:
    def test_point_on_plane(self):
        pi = Plane(np.array([0.0, 0.0, 1.0]), 0.0)
        assert point_to_plane(pi, Pose.identity(), homogenize([0.0, 0.0, 0.0])) == 0.0

    def test_axis_aligned_offset(self):
        pi = Plane(np.array([0.0, 0.0, 1.0]), -1.0)
        e = point_to_plane(pi, Pose.identity(), homogenize([5.0, 7.0, 3.0]))
        assert e == pytest.approx(2.0, abs=1e-15)

    def test_matches_dot_product_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            pi, T = random_plane(rng), random_pose(rng)
            p = homogenize(rng.uniform(-4, 4, 3))
            oracle = float(np.dot(pi.vec4(), T.matrix() @ p))
            assert point_to_plane(pi, T, p) == pytest.approx(oracle, abs=1e-12)

    def test_fixed_distance(self):
        pi = Plane(np.array([0.0, 0.0, 1.0]), -1.0)
        assert fixed_point_to_plane(pi, homogenize([5.0, 7.0, 3.0])) == pytest.approx(2.0)
        rng = np.random.default_rng(9)
        for _ in range(20):
            pi = random_plane(rng)
            p = homogenize(rng.uniform(-4, 4, 3))
            assert fixed_point_to_plane(pi, p) == pytest.approx(
                float(pi.vec4() @ p), abs=1e-12)

    def test_transform_invariance_identity(self):
        # pi^T T p equals (T^T pi)^T p: the identity behind the metric rewrite
        rng = np.random.default_rng(10)
        for _ in range(30):
            pi, T = random_plane(rng), random_pose(rng)
            p = homogenize(rng.uniform(-4, 4, 3))
            direct = point_to_plane(pi, T, p)
            via_plane = float(transform_plane(T, pi) @ p)
            assert direct == pytest.approx(via_plane, abs=1e-12)


class TestTransformPlane:
    def test_identity(self):
        pi = random_plane(np.random.default_rng(11))
        assert np.allclose(transform_plane(Pose.identity(), pi), pi.vec4())

    def test_pure_translation(self):
        pi = Plane(np.array([0.0, 0.0, 1.0]), 0.0)
        T = Pose(np.array([4.0, -2.0, 7.0]), np.zeros(3))
        assert np.allclose(transform_plane(T, pi), [0.0, 0.0, 1.0, 7.0])

    def test_component_structure(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            pi, T = random_plane(rng), random_pose(rng)
            out = transform_plane(T, pi)
            R = T.rotation()
            assert np.max(np.abs(out[:3] - R.T @ pi.n)) < 1e-12
            assert out[3] == pytest.approx(float(T.t @ pi.n) + pi.d, abs=1e-12)

    def test_dense_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            pi, T = random_plane(rng), random_pose(rng)
            assert np.max(np.abs(transform_plane(T, pi) - T.matrix().T @ pi.vec4())) == 0.0


class TestCpChart:
    def test_axis_example(self):
        pi = cp_to_plane(CpPlane(np.array([0.0, 0.0, 2.0])))
        assert np.allclose(pi.n, [0.0, 0.0, 1.0])
        assert pi.d == pytest.approx(2.0)

    def test_round_trip_cp_plane_cp(self):
        rng = np.random.default_rng(14)
        for _ in range(30):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            cp = CpPlane(n * rng.uniform(0.01, 5.0))
            back = plane_to_cp(cp_to_plane(cp))
            assert np.max(np.abs(back.vec - cp.vec)) < 1e-12

    def test_round_trip_plane_cp_plane(self):
        rng = np.random.default_rng(15)
        for _ in range(30):
            pi = random_plane(rng)
            back = cp_to_plane(plane_to_cp(pi))
            # chart canonicalizes to d > 0; flip if the source was negative
            sign = 1.0 if pi.d > 0 else -1.0
            assert np.max(np.abs(back.n - sign * pi.n)) < 1e-12
            assert back.d == pytest.approx(abs(pi.d), abs=1e-12)

    def test_degenerate_rejected(self):
        with pytest.raises(DegeneratePlaneError):
            CpPlane(np.array([1e-5, 0.0, 0.0]))
        with pytest.raises(DegeneratePlaneError):
            plane_to_cp(Plane(np.array([1.0, 0.0, 0.0]), 1e-5))

    def test_plane_validation(self):
        with pytest.raises(ValueError):
            Plane(np.array([1.0, 1.0, 0.0]), 1.0)  # not unit
        Plane(np.array([0.0, 1.0, 0.0]), 0.0)  # d = 0 is fine outside the chart


class TestHomogeneous:
    def test_homogenize(self):
        assert np.array_equal(homogenize([1.0, 2.0, 3.0]), [1.0, 2.0, 3.0, 1.0])

    def test_fourth_component_enforced(self):
        pi = random_plane(np.random.default_rng(16))
        with pytest.raises(ValueError):
            point_to_plane(pi, Pose.identity(), np.array([1.0, 2.0, 3.0, 1.1]))


class TestTumFormat:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(17)
        rows = [(0.1 * i, random_pose(rng, angle_scale=0.9)) for i in range(5)]
        path = tmp_path / "traj.tum"
        write_tum(path, rows)
        back = read_tum(path)
        assert len(back) == 5
        for (s0, p0), (s1, p1) in zip(rows, back):
            assert s1 == pytest.approx(s0, abs=1e-6)
            assert np.allclose(p1.t, p0.t, atol=1e-8)
            assert np.allclose(p1.phi, p0.phi, atol=1e-7)

    def test_comments_and_errors(self):
        rows = parse_tum("# a comment\n\n0.0 1 2 3 0 0 0 1\n")
        assert len(rows) == 1
        assert np.allclose(rows[0][1].t, [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            parse_tum("0.0 1 2 3\n")

    def test_format_has_header_and_eight_fields(self):
        text = format_tum([(0.0, Pose.identity())])
        lines = text.strip().splitlines()
        assert lines[0].startswith("#")
        assert len(lines[1].split()) == 8
