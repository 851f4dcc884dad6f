"""Finite-difference and closed-form checks of the analytic derivatives."""

import numpy as np
import pytest

from planeba.derivatives import (
    cp_plane_jacobian,
    cp_plane_second_deriv,
    fixed_linearization,
    integrated_linearization,
    plane_jacobian,
    plane_second_deriv,
)
from planeba.geometry import (
    CpPlane,
    DegeneratePlaneError,
    Pose,
    cp_to_plane,
    homogenize,
    plane_to_cp,
    point_to_plane,
    transform_plane,
)
from planeba.group_metrics import (
    EmptyGroupError,
    GroupMatrix,
    accumulate,
    fixed_msgm,
    msgm,
)
from planeba.synthetic import fd_gradient, fd_hessian, fd_jacobian

from conftest import on_plane_points, random_cp, random_pose


def transformed_plane_of(x):
    """pi'(x) as a function of the 9-vector chart, for FD oracles."""
    pose = Pose(x[0:3], x[3:6])
    return transform_plane(pose, cp_to_plane(CpPlane(x[6:9])))


class TestPlaneJacobian:
    def test_translation_block_sparsity(self):
        # only the fourth row of the translation block is nonzero, and it is n
        rng = np.random.default_rng(0)
        for _ in range(20):
            T, cp = random_pose(rng), random_cp(rng)
            J = plane_jacobian(T, cp)
            assert np.array_equal(J[:3, :3], np.zeros((3, 3)))
            assert np.allclose(J[3, :3], cp_to_plane(cp).n, atol=1e-15)
            assert np.array_equal(J[3, 3:6], np.zeros(3))  # angle block, last row

    def test_cp_block_axis_example(self):
        J = plane_jacobian(Pose.identity(), CpPlane(np.array([0.0, 0.0, 1.0])))
        expected = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 0], [0, 0, 1.0]])
        assert np.allclose(J[:, 6:9], expected, atol=1e-15)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(50):
            T, cp = random_pose(rng), random_cp(rng)
            x0 = np.concatenate([T.t, T.phi, cp.vec])
            fd = fd_jacobian(transformed_plane_of, x0, step=1e-6)
            worst = max(worst, np.max(np.abs(fd - plane_jacobian(T, cp))))
        assert worst < 1e-6

    def test_degenerate_plane_raises(self):
        with pytest.raises(DegeneratePlaneError):
            plane_jacobian(Pose.identity(), CpPlane(np.array([1e-5, 0, 0])))


class TestPlaneSecondDeriv:
    def test_translation_blocks_zero(self):
        rng = np.random.default_rng(2)
        G = plane_second_deriv(random_pose(rng), random_cp(rng))
        assert np.array_equal(G[:3, :3], np.zeros((3, 3, 4)))      # (t, t)
        assert np.array_equal(G[:3, 3:6], np.zeros((3, 3, 4)))    # (t, phi)
        assert np.array_equal(G[3:6, :3], np.zeros((3, 3, 4)))

    def test_exactly_symmetric(self):
        rng = np.random.default_rng(3)
        G = plane_second_deriv(random_pose(rng), random_cp(rng))
        assert np.array_equal(G, np.transpose(G, (1, 0, 2)))

    def test_yaw_curvature_at_identity(self):
        # second derivative of R^T n in the yaw angle at zero rotation
        cp = random_cp(np.random.default_rng(4))
        n = cp_to_plane(cp).n
        G = plane_second_deriv(Pose.identity(), cp)
        assert np.allclose(G[5, 5][:3], [-n[0], -n[1], 0.0], atol=1e-15)
        assert G[5, 5][3] == 0.0

    def test_matches_fd_of_jacobian(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(25):
            T, cp = random_pose(rng), random_cp(rng)
            x0 = np.concatenate([T.t, T.phi, cp.vec])

            def jac_flat(x):
                return plane_jacobian(Pose(x[0:3], x[3:6]), CpPlane(x[6:9])).ravel()

            fd = fd_jacobian(jac_flat, x0, step=1e-5).reshape(4, 9, 9)
            analytic = np.transpose(plane_second_deriv(T, cp), (2, 0, 1))
            worst = max(worst, np.max(np.abs(fd - analytic)))
        assert worst < 1e-5


class TestChartDerivatives:
    def test_jacobian_block_structure(self):
        rng = np.random.default_rng(6)
        cp = random_cp(rng)
        pi = cp_to_plane(cp)
        J = cp_plane_jacobian(cp)
        assert np.allclose(J[:3, :], (np.eye(3) - np.outer(pi.n, pi.n)) / pi.d)
        assert np.allclose(J[3, :], pi.n)

    def test_second_deriv_matches_fd(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            cp = random_cp(rng)

            def jac_flat(y):
                return cp_plane_jacobian(CpPlane(y)).ravel()

            fd = fd_jacobian(jac_flat, cp.vec, step=1e-5).reshape(4, 3, 3)
            analytic = np.transpose(cp_plane_second_deriv(cp), (2, 0, 1))
            assert np.max(np.abs(fd - analytic)) < 1e-5


class TestIntegratedLinearization:
    def test_on_plane_points_stationary(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            cp = random_cp(rng)
            pts = on_plane_points(cp_to_plane(cp), rng, 40)
            lin = integrated_linearization(Pose.identity(), cp,
                                           GroupMatrix.from_points(pts))
            assert np.max(np.abs(lin.gradient)) < 1e-10
            assert np.linalg.eigvalsh(lin.hessian)[0] > -1e-8

    def test_single_point_chain_rule(self):
        # gradient of e^2 must be 2 e de/dx with e the scalar distance
        rng = np.random.default_rng(9)
        T, cp = random_pose(rng), random_cp(rng)
        p = rng.uniform(-3, 3, 3)
        g = accumulate(GroupMatrix.zero(), homogenize(p))
        lin = integrated_linearization(T, cp, g)
        e = point_to_plane(cp_to_plane(cp), T, homogenize(p))
        de_dx = homogenize(p) @ plane_jacobian(T, cp)
        assert np.max(np.abs(lin.gradient - 2.0 * e * de_dx)) < 1e-11

    def test_value_equals_msgm(self):
        rng = np.random.default_rng(10)
        T, cp = random_pose(rng), random_cp(rng)
        g = GroupMatrix.from_points(rng.uniform(-3, 3, size=(30, 3)))
        lin = integrated_linearization(T, cp, g)
        assert lin.value == pytest.approx(msgm(cp_to_plane(cp), T, g), rel=1e-12)

    def test_gradient_and_hessian_match_fd(self):
        rng = np.random.default_rng(11)
        worst_g = worst_h = 0.0
        for _ in range(60):
            T, cp = random_pose(rng), random_cp(rng)
            g = GroupMatrix.from_points(
                rng.uniform(-3, 3, size=(rng.integers(1, 200), 3)))

            def metric(x):
                return msgm(cp_to_plane(CpPlane(x[6:9])), Pose(x[0:3], x[3:6]), g)

            def grad(x):
                return integrated_linearization(
                    Pose(x[0:3], x[3:6]), CpPlane(x[6:9]), g).gradient

            x0 = np.concatenate([T.t, T.phi, cp.vec])
            lin = integrated_linearization(T, cp, g)
            fd_g = fd_gradient(metric, x0, step=1e-6)
            worst_g = max(worst_g, np.max(np.abs(fd_g - lin.gradient))
                          / max(np.max(np.abs(lin.gradient)), 1e-12))
            fd_h = fd_hessian(grad, x0, step=1e-5)
            worst_h = max(worst_h, np.max(np.abs(fd_h - lin.hessian)))
        assert worst_g < 1e-5
        assert worst_h < 1e-4

    def test_hessian_symmetric(self):
        rng = np.random.default_rng(12)
        T, cp = random_pose(rng), random_cp(rng)
        g = GroupMatrix.from_points(rng.uniform(-3, 3, size=(20, 3)))
        H = integrated_linearization(T, cp, g).hessian
        assert np.array_equal(H, H.T)

    def test_gauss_newton_drops_curvature(self):
        rng = np.random.default_rng(13)
        T, cp = random_pose(rng), random_cp(rng)
        g = GroupMatrix.from_points(rng.uniform(-3, 3, size=(20, 3)))
        J = plane_jacobian(T, cp)
        expected = (2.0 / g.n) * (J.T @ g.S @ J)
        gn = integrated_linearization(T, cp, g, gauss_newton=True)
        assert np.max(np.abs(gn.hessian - 0.5 * (expected + expected.T))) < 1e-12

    def test_empty_group_raises(self):
        rng = np.random.default_rng(14)
        with pytest.raises(EmptyGroupError):
            integrated_linearization(random_pose(rng), random_cp(rng),
                                     GroupMatrix.zero())


class TestFixedLinearization:
    def test_on_plane_points_stationary(self):
        rng = np.random.default_rng(15)
        cp = random_cp(rng)
        pts = on_plane_points(cp_to_plane(cp), rng, 40)
        lin = fixed_linearization(cp, GroupMatrix.from_points(pts))
        assert np.max(np.abs(lin.gradient)) < 1e-10

    def test_single_point_chain_rule(self):
        rng = np.random.default_rng(16)
        cp = random_cp(rng)
        p = rng.uniform(-3, 3, 3)
        g = accumulate(GroupMatrix.zero(), homogenize(p))
        lin = fixed_linearization(cp, g)
        e = float(cp_to_plane(cp).vec4() @ homogenize(p))
        de_dy = homogenize(p) @ cp_plane_jacobian(cp)
        assert np.max(np.abs(lin.gradient - 2.0 * e * de_dy)) < 1e-11

    def test_gradient_and_hessian_match_fd(self):
        rng = np.random.default_rng(17)
        worst_g = worst_h = 0.0
        for _ in range(60):
            cp = random_cp(rng)
            g = GroupMatrix.from_points(
                rng.uniform(-3, 3, size=(rng.integers(1, 200), 3)))

            def metric(y):
                return fixed_msgm(cp_to_plane(CpPlane(y)), g)

            def grad(y):
                return fixed_linearization(CpPlane(y), g).gradient

            lin = fixed_linearization(cp, g)
            fd_g = fd_gradient(metric, cp.vec, step=1e-6)
            worst_g = max(worst_g, np.max(np.abs(fd_g - lin.gradient))
                          / max(np.max(np.abs(lin.gradient)), 1e-12))
            fd_h = fd_hessian(grad, cp.vec, step=1e-5)
            worst_h = max(worst_h, np.max(np.abs(fd_h - lin.hessian)))
        assert worst_g < 1e-5
        assert worst_h < 1e-4

    def test_value_equals_fixed_msgm(self):
        rng = np.random.default_rng(18)
        cp = random_cp(rng)
        g = GroupMatrix.from_points(rng.uniform(-3, 3, size=(25, 3)))
        lin = fixed_linearization(cp, g)
        assert lin.value == pytest.approx(fixed_msgm(cp_to_plane(cp), g), rel=1e-12)


def test_zero_noise_stationarity(small_scene):
    # ground-truth state on noiseless data: every gradient vanishes
    scene = small_scene
    for i, pose in enumerate(scene.poses):
        for j, plane in enumerate(scene.planes):
            g = GroupMatrix.from_points(scene.points[(i, j)])
            lin = integrated_linearization(pose, plane_to_cp(plane), g)
            assert np.max(np.abs(lin.gradient)) < 1e-9
