"""Point-cluster moment matrices and the group metrics built from them.

A group matrix summarizes a set of homogeneous points as S = sum p~ p~^T with
its point count, so a plane's summed squared distance over the whole set is a
single quadratic form instead of a per-point loop.  Dividing by the count
gives the mean-square metric, which keeps an interpretable m^2 scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Plane, Pose, check_homogeneous

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-9  # relative to trace; accumulated rounding grows with N


class EmptyGroupError(ValueError):
    """Metric requested on a group with no points."""


@dataclass(frozen=True, eq=False)
class GroupMatrix:
    """4x4 second-moment matrix of homogeneous points plus the point count."""

    S: np.ndarray
    n: int

    def __post_init__(self):
        S = np.array(self.S, dtype=float)
        n = int(self.n)
        if S.shape != (4, 4):
            raise ValueError(f"group matrix must be 4x4, got {S.shape}")
        if not np.all(np.isfinite(S)):
            raise ValueError("group matrix must be finite")
        if n < 0:
            raise ValueError("point count must be non-negative")
        if np.max(np.abs(S - S.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(S))):
            raise ValueError("group matrix must be symmetric")
        if S[3, 3] != float(n):
            raise ValueError(f"corner entry {S[3, 3]!r} must equal point count {n}")
        if n == 0 and np.any(S != 0.0):
            raise ValueError("empty group must have a zero matrix")
        tr = np.trace(S)
        if n > 0 and np.linalg.eigvalsh(S)[0] < -PSD_TOL * tr:
            raise ValueError("group matrix must be positive semidefinite")
        S.setflags(write=False)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "n", n)

    @staticmethod
    def zero() -> "GroupMatrix":
        return GroupMatrix(np.zeros((4, 4)), 0)

    @staticmethod
    def from_points(points) -> "GroupMatrix":
        """Group matrix of an (N, 3) array of points (homogenized internally)."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected (N, 3) points, got {pts.shape}")
        homo = np.hstack([pts, np.ones((pts.shape[0], 1))])
        S = homo.T @ homo
        S = 0.5 * (S + S.T)
        S[3, 3] = float(pts.shape[0])
        return GroupMatrix(S, pts.shape[0])


def accumulate(g: GroupMatrix, p) -> GroupMatrix:
    """Group matrix with one homogeneous point added: S + p~ p~^T, N + 1."""
    p = check_homogeneous(p)
    return GroupMatrix(g.S + np.outer(p, p), g.n + 1)


def merge(a: GroupMatrix, b: GroupMatrix) -> GroupMatrix:
    """Componentwise sum of two groups; commutative and associative."""
    return GroupMatrix(a.S + b.S, a.n + b.n)


def group_cost(pi: Plane, T: Pose, g: GroupMatrix) -> float:
    """Summed squared plane distance pi^T T S T^T pi over the group (m^2 * count).

    The quadratic form of a PSD matrix is non-negative; rounding noise a few
    ulp below zero is clamped so downstream kernels see a valid metric.
    """
    if g.n == 0:
        raise EmptyGroupError("group metric requires at least one point")
    v = T.matrix().T @ pi.vec4()
    return max(float(v @ g.S @ v), 0.0)


def fixed_group_cost(pi: Plane, g: GroupMatrix) -> float:
    """Summed squared plane distance pi^T S pi for map-frame points."""
    if g.n == 0:
        raise EmptyGroupError("group metric requires at least one point")
    v = pi.vec4()
    return max(float(v @ g.S @ v), 0.0)


def msgm(pi: Plane, T: Pose, g: GroupMatrix) -> float:
    """Mean-square group metric: group_cost / N (m^2)."""
    return group_cost(pi, T, g) / g.n


def fixed_msgm(pi: Plane, g: GroupMatrix) -> float:
    """Mean-square fixed metric: fixed_group_cost / N (m^2)."""
    return fixed_group_cost(pi, g) / g.n


def marginalize_into_fixed(g: GroupMatrix, T: Pose) -> GroupMatrix:
    """Congruence transform T S T^T: the group re-expressed in the map frame.

    Equivalent to transforming every constituent point by T and re-accumulating.
    """
    M = T.matrix()
    S = M @ g.S @ M.T
    S = 0.5 * (S + S.T)
    S[3, 3] = float(g.n)
    return GroupMatrix(S, g.n)


def group_to_text(g: GroupMatrix) -> str:
    """Row-major 16 numbers followed by the point count, one line."""
    vals = " ".join(f"{v:.17g}" for v in g.S.ravel())
    return f"{vals} {g.n}"


def group_from_text(line: str) -> GroupMatrix:
    parts = line.split()
    if len(parts) != 17:
        raise ValueError(f"expected 17 fields for a group matrix, got {len(parts)}")
    S = np.array([float(v) for v in parts[:16]]).reshape(4, 4)
    return GroupMatrix(S, int(parts[16]))
