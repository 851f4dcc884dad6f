"""Analytic first and second derivatives of the mean-square group metrics.

The integrated metric is parameterized by the 9-vector x = [t, phi, Pi]
(pose translation, pose Euler angles, closest-point plane), the fixed metric
by the 3-vector Pi alone.  Everything below is built from two ingredients:

    pi'(x) = T(t, phi)^T pi(Pi)        transformed plane, 4-vector
    c(x)   = pi'^T Q pi' / N           mean-square metric

so the gradient is (2/N) pi'^T Q d(pi')/dx_k and the Hessian adds the
second-derivative tensor of pi'.  The per-axis rotation factors are
differentiated in closed form; finite differences arbitrate correctness
(see tests).

Pose and plane objects are immutable, so their derivative tables are cached
by object identity; a solver pass reuses them across every observation that
shares a pose or landmark.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import CpPlane, Pose, cp_to_plane
from .group_metrics import EmptyGroupError, GroupMatrix


@dataclass(frozen=True, eq=False)
class MetricLinearization:
    """Metric value plus its gradient vector and symmetric Hessian matrix."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray


def _axis_factors(angle: float, axis: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-axis rotation matrix and its first/second angle derivatives."""
    c, s = np.cos(angle), np.sin(angle)
    if axis == 0:
        m0 = np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])
        m1 = np.array([[0.0, 0, 0], [0, -s, -c], [0, c, -s]])
        m2 = np.array([[0.0, 0, 0], [0, -c, s], [0, -s, -c]])
    elif axis == 1:
        m0 = np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])
        m1 = np.array([[-s, 0, c], [0, 0.0, 0], [-c, 0, -s]])
        m2 = np.array([[-c, 0, -s], [0, 0.0, 0], [s, 0, -c]])
    else:
        m0 = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        m1 = np.array([[-s, -c, 0], [c, -s, 0], [0, 0, 0.0]])
        m2 = np.array([[-c, s, 0], [-s, -c, 0], [0, 0, 0.0]])
    return m0, m1, m2


def rotation_derivative(phi, orders: tuple[int, int, int]) -> np.ndarray:
    """Mixed partial of Rx Ry Rz: each order picks the per-axis derivative."""
    fx = _axis_factors(phi[0], 0)[orders[0]]
    fy = _axis_factors(phi[1], 1)[orders[1]]
    fz = _axis_factors(phi[2], 2)[orders[2]]
    return fx @ fy @ fz


@lru_cache(maxsize=16384)
def _pose_tables(pose: Pose) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(4x4 matrix, first rotation derivatives (3,3,3), second (3,3,3,3))."""
    fx = _axis_factors(pose.phi[0], 0)
    fy = _axis_factors(pose.phi[1], 1)
    fz = _axis_factors(pose.phi[2], 2)
    dR = np.stack([fx[1] @ fy[0] @ fz[0],
                   fx[0] @ fy[1] @ fz[0],
                   fx[0] @ fy[0] @ fz[1]])
    ddR = np.empty((3, 3, 3, 3))
    for k in range(3):
        for l in range(k, 3):
            orders = [0, 0, 0]
            orders[k] += 1
            orders[l] += 1
            m = ((fx[orders[0]]) @ (fy[orders[1]]) @ (fz[orders[2]]))
            ddR[k, l] = m
            ddR[l, k] = m
    return pose.matrix(), dR, ddR


@lru_cache(maxsize=16384)
def _cp_tables(cp: CpPlane) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(plane 4-vector, chart Jacobian (4,3), chart second derivatives (3,3,4))."""
    pi = cp_to_plane(cp)
    n, d = pi.n, pi.d
    J = np.zeros((4, 3))
    J[:3, :] = (np.eye(3) - np.outer(n, n)) / d
    J[3, :] = n
    G = np.zeros((3, 3, 4))
    eye = np.eye(3)
    for k in range(3):
        for l in range(k, 3):
            vec = np.zeros(4)
            vec[:3] = -(n[k] * eye[l] + n[l] * eye[k] + eye[k, l] * n
                        - 3.0 * n[k] * n[l] * n) / (d * d)
            vec[3] = (eye[k, l] - n[k] * n[l]) / d
            G[k, l] = vec
            G[l, k] = vec
    for arr in (J, G):
        arr.setflags(write=False)
    return pi.vec4(), J, G


def cp_plane_jacobian(cp: CpPlane) -> np.ndarray:
    """4x3 derivative of the plane 4-vector [n, d] in the closest-point chart.

    Rows 1-3 are (1/d)(I - n n^T), row 4 is n^T.
    """
    return _cp_tables(cp)[1].copy()


def cp_plane_second_deriv(cp: CpPlane) -> np.ndarray:
    """(3, 3, 4) tensor of second derivatives of [n, d] in the chart.

    Obtained by differentiating the chart Jacobian once more:
        d^2 n / dPi_k dPi_l = -(n_k e_l + n_l e_k + delta_kl n - 3 n_k n_l n) / d^2
        d^2 d / dPi_k dPi_l =  (delta_kl - n_k n_l) / d
    """
    return _cp_tables(cp)[2].copy()


def plane_jacobian(T: Pose, cp: CpPlane) -> np.ndarray:
    """4x9 derivative of the transformed plane pi' = T^T pi w.r.t. [t, phi, Pi].

    Column layout: 0-2 translation, 3-5 Euler angles, 6-8 closest-point chart.
    The translation block is nonzero only in the fourth row (= n^T); the angle
    block has a zero fourth row.
    """
    Tmat, dR, _ = _pose_tables(T)
    vec4, Jcp, _ = _cp_tables(cp)
    n = vec4[:3]
    J = np.zeros((4, 9))
    J[3, :3] = n
    J[:3, 3:6] = np.einsum("kab,a->bk", dR, n)
    J[:, 6:9] = Tmat.T @ Jcp
    return J


def plane_second_deriv(T: Pose, cp: CpPlane) -> np.ndarray:
    """(9, 9, 4) tensor of second derivatives of pi' w.r.t. [t, phi, Pi].

    Zero blocks: (t, t) because pi' is linear in t, and (t, phi) because the
    translation only enters the fourth row, which carries no angles.
    """
    Tmat, dR, ddR = _pose_tables(T)
    vec4, Jcp, Gcp = _cp_tables(cp)
    n = vec4[:3]
    G = np.zeros((9, 9, 4))

    # (phi, phi): second derivatives of R^T n.
    G[3:6, 3:6, :3] = np.einsum("klab,a->klb", ddR, n)

    # (t, Pi): fourth row is t.n + d, so only dn/dPi survives.
    G[0:3, 6:9, 3] = Jcp[:3, :]
    G[6:9, 0:3, 3] = Jcp[:3, :].T

    # (phi, Pi): rotate the chart derivative of the normal.
    cross = np.einsum("kab,al->klb", dR, Jcp[:3, :])
    G[3:6, 6:9, :3] = cross
    G[6:9, 3:6, :3] = cross.transpose(1, 0, 2)

    # (Pi, Pi): chart curvature pushed through the constant transform.
    G[6:9, 6:9, :] = np.einsum("ba,klb->kla", Tmat, Gcp)

    return G


def _linearize(value_scale: float, v: np.ndarray, Q: np.ndarray, J: np.ndarray,
               G: np.ndarray | None) -> MetricLinearization:
    """Shared assembly of (2/N)-scaled gradient and Hessian."""
    q = Q @ v
    grad = value_scale * (q @ J)
    first = J.T @ (Q @ J)
    H = value_scale * 0.5 * (first + first.T)
    if G is not None:
        H = H + value_scale * (G @ q)
    value = max(float(v @ q), 0.0) * value_scale * 0.5  # PSD form; clamp roundoff
    return MetricLinearization(value, grad, H)


def integrated_linearization(T: Pose, cp: CpPlane, g: GroupMatrix,
                             gauss_newton: bool = False) -> MetricLinearization:
    """Value, gradient, and Hessian of the integrated mean-square metric.

    gauss_newton drops the second-derivative tensor term of the Hessian,
    keeping only the J^T Q J part.
    """
    if g.n == 0:
        raise EmptyGroupError("linearization requires a non-empty group")
    Tmat, _, _ = _pose_tables(T)
    vec4, _, _ = _cp_tables(cp)
    v = Tmat.T @ vec4
    J = plane_jacobian(T, cp)
    G = None if gauss_newton else plane_second_deriv(T, cp)
    return _linearize(2.0 / g.n, v, g.S, J, G)


def fixed_linearization(cp: CpPlane, g: GroupMatrix,
                        gauss_newton: bool = False) -> MetricLinearization:
    """Value, gradient, and Hessian of the fixed mean-square metric (3-dim chart)."""
    if g.n == 0:
        raise EmptyGroupError("linearization requires a non-empty group")
    vec4, Jcp, Gcp = _cp_tables(cp)
    G = None if gauss_newton else Gcp
    return _linearize(2.0 / g.n, vec4, g.S, Jcp, G)
