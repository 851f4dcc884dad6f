"""Trajectory accuracy and map-quality metrics.

ATE RMSE associates estimate and reference poses by nearest timestamp,
rigidly aligns the estimated positions onto the reference (least squares,
no scale), and reports the RMS translational residual.  Voxel occupancy
counts distinct fixed-size voxels touched by a reconstructed cloud; tighter
registration occupies fewer voxels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, read_tum

ASSOC_TOL = 0.02  # seconds; nearest-neighbor association window


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered (timestamp, pose) sequence with strictly increasing stamps."""

    times: np.ndarray
    poses: tuple[Pose, ...]

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        poses = tuple(self.poses)
        if times.ndim != 1 or len(times) != len(poses):
            raise ValueError("one timestamp per pose required")
        if len(times) > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("timestamps must be strictly increasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "poses", poses)

    @staticmethod
    def from_rows(rows) -> "Trajectory":
        rows = list(rows)
        return Trajectory(np.array([s for s, _ in rows]), tuple(p for _, p in rows))

    @staticmethod
    def from_tum(path) -> "Trajectory":
        return Trajectory.from_rows(read_tum(path))

    def positions(self) -> np.ndarray:
        return np.array([p.t for p in self.poses])


def associate(est: Trajectory, ref: Trajectory, tol: float = ASSOC_TOL) -> list[tuple[int, int]]:
    """Nearest-timestamp pairs within tol seconds, each reference used once."""
    pairs = []
    used = set()
    for ie, te in enumerate(est.times):
        ir = int(np.argmin(np.abs(ref.times - te)))
        if abs(ref.times[ir] - te) <= tol and ir not in used:
            pairs.append((ie, ir))
            used.add(ir)
    return pairs


def align_rigid(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rigid transform (R, t) with R src + t closest to dst."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    cov = (dst - cd).T @ (src - cs)
    U, _, Vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(U @ Vt))
    R = U @ np.diag([1.0, 1.0, sign]) @ Vt
    return R, cd - R @ cs


def ate_rmse(est: Trajectory, ref: Trajectory, assoc_tol: float = ASSOC_TOL,
             align: str = "se3") -> float:
    """RMS translational error after alignment (meters).

    align: "se3" for full rigid alignment, "translation" for centroid shift
    only, "none" to compare in shared coordinates.
    """
    if align not in ("se3", "translation", "none"):
        raise ValueError(f"align must be se3, translation, or none; got {align!r}")
    pairs = associate(est, ref, tol=assoc_tol)
    if len(pairs) < 2:
        raise ValueError(f"need at least 2 associated poses, found {len(pairs)}")
    p_est = np.array([est.poses[ie].t for ie, _ in pairs])
    p_ref = np.array([ref.poses[ir].t for _, ir in pairs])
    if align == "se3":
        R, t = align_rigid(p_est, p_ref)
        p_est = p_est @ R.T + t
    elif align == "translation":
        p_est = p_est + (p_ref.mean(axis=0) - p_est.mean(axis=0))
    resid = p_est - p_ref
    return float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))


def voxel_occupancy(points, voxel: float = 0.1) -> int:
    """Number of distinct floor-keyed voxels containing at least one point."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
        raise ValueError(f"expected non-empty (N, 3) points, got shape {pts.shape}")
    keys = np.floor(pts / voxel).astype(np.int64)
    return int(np.unique(keys, axis=0).shape[0])
