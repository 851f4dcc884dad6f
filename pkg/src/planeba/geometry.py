"""SE(3) poses with Euler-angle rotations, plane parameterizations, and the
coordinate transforms consumed by the plane metrics.

Conventions:
    - A pose maps LiDAR-frame points into the map frame: p_map = R p + t.
    - The rotation matrix is the product Rx(phi_x) Ry(phi_y) Rz(phi_z); pitch
      is restricted to |phi_y| <= pi/2 - 1e-6 so the chart stays invertible.
    - A plane [n, d] assigns a point p the signed distance n.p + d, so
      d = -n.x0 for any point x0 on the plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

GIMBAL_MARGIN = 1e-6        # exclusion band around |pitch| = pi/2
MIN_PLANE_OFFSET = 1e-4     # meters; closest-point chart is singular at d = 0
UNIT_NORM_TOL = 1e-9


class GimbalLockError(ValueError):
    """Pitch angle too close to +/-pi/2 for the Euler chart."""


class DegeneratePlaneError(ValueError):
    """Plane too close to the coordinate origin for the closest-point chart."""


def _finite_vec(x, n: int, name: str) -> np.ndarray:
    v = np.array(x, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"{name} must be a length-{n} vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite, got {v}")
    return v


def euler_to_rotation(phi) -> np.ndarray:
    """Rotation matrix Rx(phi_x) Ry(phi_y) Rz(phi_z) for angles in radians.

    Written out entry by entry because the derivative tables in
    :mod:`planeba.derivatives` differentiate exactly this form.
    """
    phi = _finite_vec(phi, 3, "phi")
    if abs(phi[1]) > math.pi / 2 - GIMBAL_MARGIN:
        raise GimbalLockError(f"pitch {phi[1]!r} within gimbal-lock band")
    sx, sy, sz = np.sin(phi)
    cx, cy, cz = np.cos(phi)
    return np.array([
        [cy * cz, -cy * sz, sy],
        [cx * sz + sx * sy * cz, cx * cz - sx * sy * sz, -sx * cy],
        [sx * sz - cx * sy * cz, cx * sy * sz + sx * cz, cx * cy],
    ])


def rotation_to_euler(R: np.ndarray) -> np.ndarray:
    """Recover (phi_x, phi_y, phi_z) from a rotation matrix.

    Uses the pitch branch in (-pi/2, pi/2); raises GimbalLockError when the
    matrix sits inside the exclusion band where the chart is not invertible.
    """
    sy = float(R[0, 2])
    if abs(sy) >= math.sin(math.pi / 2 - GIMBAL_MARGIN):
        raise GimbalLockError("rotation too close to gimbal lock for Euler extraction")
    phi_y = math.asin(sy)
    phi_x = math.atan2(-R[1, 2], R[2, 2])
    phi_z = math.atan2(-R[0, 1], R[0, 0])
    return np.array([phi_x, phi_y, phi_z])


@dataclass(frozen=True, eq=False)
class Pose:
    """Keyframe pose: translation t (meters) and Euler angles phi (radians)."""

    t: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        t = _finite_vec(self.t, 3, "t")
        phi = _finite_vec(self.phi, 3, "phi")
        if abs(phi[1]) > math.pi / 2 - GIMBAL_MARGIN:
            raise GimbalLockError(f"pitch {phi[1]!r} within gimbal-lock band")
        t.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "phi", phi)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.zeros(3))

    def rotation(self) -> np.ndarray:
        """Rotation matrix; cached, returned read-only."""
        R = self.__dict__.get("_rotation")
        if R is None:
            R = euler_to_rotation(self.phi)
            R.setflags(write=False)
            self.__dict__["_rotation"] = R
        return R

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 transform [[R, t], [0, 1]]; cached, read-only."""
        M = self.__dict__.get("_matrix")
        if M is None:
            M = np.eye(4)
            M[:3, :3] = self.rotation()
            M[:3, 3] = self.t
            M.setflags(write=False)
            self.__dict__["_matrix"] = M
        return M

    @staticmethod
    def from_matrix(M: np.ndarray) -> "Pose":
        """Re-extract the Euler chart from a homogeneous matrix."""
        M = np.asarray(M, dtype=float)
        if M.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {M.shape}")
        return Pose(M[:3, 3].copy(), rotation_to_euler(M[:3, :3]))

    def apply(self, p) -> np.ndarray:
        """Map a 3D point (or (N, 3) array) from the local into the map frame."""
        p = np.asarray(p, dtype=float)
        return p @ self.rotation().T + self.t


def compose(a: Pose, b: Pose) -> Pose:
    """Pose whose matrix is matrix(a) @ matrix(b), Euler angles re-extracted."""
    return Pose.from_matrix(a.matrix() @ b.matrix())


def invert(a: Pose) -> Pose:
    """Inverse pose: rotation transposed, translation -R^T t."""
    R = a.rotation()
    return Pose(-R.T @ a.t, rotation_to_euler(R.T))


@dataclass(frozen=True, eq=False)
class Plane:
    """Hesse-form plane [n, d] with unit normal n and signed offset d (meters).

    d may be arbitrarily small here; the closest-point chart (and landmark
    creation) additionally require |d| >= MIN_PLANE_OFFSET.
    """

    n: np.ndarray
    d: float

    def __post_init__(self):
        n = _finite_vec(self.n, 3, "n")
        d = float(self.d)
        if not math.isfinite(d):
            raise ValueError("plane offset must be finite")
        if abs(np.linalg.norm(n) - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"plane normal must be unit length, got |n|={np.linalg.norm(n)!r}")
        n.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "d", d)

    def vec4(self) -> np.ndarray:
        return np.array([self.n[0], self.n[1], self.n[2], self.d])


@dataclass(frozen=True, eq=False)
class CpPlane:
    """Closest-point plane chart: the 3-vector d*n (meters)."""

    vec: np.ndarray

    def __post_init__(self):
        v = _finite_vec(self.vec, 3, "closest-point vector")
        if np.linalg.norm(v) < MIN_PLANE_OFFSET:
            raise DegeneratePlaneError(
                f"closest-point vector norm {np.linalg.norm(v)!r} below {MIN_PLANE_OFFSET}")
        v.setflags(write=False)
        object.__setattr__(self, "vec", v)


def cp_to_plane(cp: CpPlane) -> Plane:
    """Plane [Pi/|Pi|, |Pi|] for closest-point vector Pi; d comes out positive."""
    norm = float(np.linalg.norm(cp.vec))
    return Plane(cp.vec / norm, norm)


def plane_to_cp(pi: Plane) -> CpPlane:
    """Closest-point vector d*n; rejects planes through the origin."""
    if abs(pi.d) < MIN_PLANE_OFFSET:
        raise DegeneratePlaneError(f"plane offset {pi.d!r} below {MIN_PLANE_OFFSET}")
    return CpPlane(pi.d * pi.n)


def homogenize(p) -> np.ndarray:
    """Homogeneous coordinates of a 3D point (appends exactly 1)."""
    p = _finite_vec(p, 3, "point")
    return np.array([p[0], p[1], p[2], 1.0])


def check_homogeneous(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (4,):
        raise ValueError(f"homogeneous point must have shape (4,), got {p.shape}")
    if p[3] != 1.0:
        raise ValueError(f"homogeneous point must have fourth component 1, got {p[3]!r}")
    if not np.all(np.isfinite(p)):
        raise ValueError("homogeneous point must be finite")
    return p


def point_to_plane(pi: Plane, T: Pose, p) -> float:
    """Signed distance pi^T (T p~) of a local measurement point to a map plane."""
    p = check_homogeneous(p)
    return float(pi.vec4() @ T.matrix() @ p)


def fixed_point_to_plane(pi: Plane, p) -> float:
    """Signed distance pi^T p~ of a map-frame point to a plane."""
    p = check_homogeneous(p)
    return float(pi.vec4() @ p)


def transform_plane(T: Pose, pi: Plane) -> np.ndarray:
    """Plane expressed in the local frame: the 4-vector T^T pi.

    The first three components are R^T n, the fourth is t.n + d; the result
    satisfies pi^T (T p~) = (T^T pi)^T p~ for every homogeneous point.
    """
    return T.matrix().T @ pi.vec4()


# --- TUM trajectory serialization ------------------------------------------
# Format: "timestamp tx ty tz qx qy qz qw" per line, '#' starts a comment.
# Quaternions are internal plumbing; poses round-trip through the Euler chart.

def pose_to_quaternion(pose: Pose) -> np.ndarray:
    """Quaternion (qx, qy, qz, qw) of the pose rotation."""
    return Rotation.from_matrix(pose.rotation()).as_quat()


def pose_from_quaternion(t, quat) -> Pose:
    R = Rotation.from_quat(np.asarray(quat, dtype=float)).as_matrix()
    return Pose(np.asarray(t, dtype=float), rotation_to_euler(R))


def format_tum(rows) -> str:
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for stamp, pose in rows:
        q = pose_to_quaternion(pose)
        fields = [f"{stamp:.6f}"] + [f"{v:.9f}" for v in (*pose.t, *q)]
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def parse_tum(text: str) -> list[tuple[float, Pose]]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ValueError(f"TUM line {lineno}: expected 8 fields, got {len(parts)}")
        vals = [float(v) for v in parts]
        rows.append((vals[0], pose_from_quaternion(vals[1:4], vals[4:8])))
    return rows


def write_tum(path, rows) -> None:
    from .ioutil import atomic_write_text

    atomic_write_text(path, format_tum(rows))


def read_tum(path) -> list[tuple[float, Pose]]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_tum(fh.read())
