"""Hash-indexed adaptive voxel map for plane-landmark extraction and upkeep.

Frames are bucketed into root voxels by floor-keyed spatial hashing; voxels
whose pooled points pass a PCA planarity test become plane landmarks, the
rest subdivide into octants until a depth limit.  The map keeps per-frame
point buffers per leaf so sliding windows can be rebuilt, and folds the
oldest frame's measurements into each landmark's fixed group matrix when a
keyframe is marginalized out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CpPlane,
    MIN_PLANE_OFFSET,
    Plane,
    Pose,
    plane_to_cp,
)
from .group_metrics import GroupMatrix, marginalize_into_fixed, merge
from .solver import Observation, Window


@dataclass
class VoxelMapConfig:
    r_max: float = 1.0            # root voxel edge length (m)
    d_max: int = 4                # maximum subdivision depth
    n_min: int = 10               # minimum points before fitting
    planarity_lam3: float = 0.0025    # max variance along the normal (m^2)
    planarity_ratio: float = 0.1      # max lam3 / lam2


def voxel_key(p, r_max: float) -> tuple[int, int, int]:
    """Root voxel index of a map-frame point; floor semantics, not truncation."""
    p = np.asarray(p, dtype=float)
    return tuple(int(v) for v in np.floor(p / r_max))


@dataclass
class PlaneLandmark:
    """Plane estimate plus the marginalized fixed group matrix."""

    id: int
    plane: CpPlane
    fixed: GroupMatrix = field(default_factory=GroupMatrix.zero)


class AdaptiveVoxel:
    """One cube of the adaptive map: either a leaf or eight children."""

    __slots__ = ("origin", "size", "depth", "frames_local", "frames_map",
                 "children", "landmark_id", "rejected")

    def __init__(self, origin: np.ndarray, size: float, depth: int):
        self.origin = origin
        self.size = size
        self.depth = depth
        self.frames_local: dict[int, list[np.ndarray]] = {}
        self.frames_map: dict[int, list[np.ndarray]] = {}
        self.children: list[AdaptiveVoxel] | None = None
        self.landmark_id: int | None = None
        self.rejected = False  # planar but through the origin; unusable landmark

    def is_leaf(self) -> bool:
        return self.children is None

    def point_count(self) -> int:
        return sum(len(c) for chunks in self.frames_local.values() for c in chunks)

    def add(self, frame_id: int, local_pts: np.ndarray, map_pts: np.ndarray) -> None:
        if self.children is not None:
            self._route_children(frame_id, local_pts, map_pts)
            return
        self.frames_local.setdefault(frame_id, []).append(local_pts)
        self.frames_map.setdefault(frame_id, []).append(map_pts)

    def _route_children(self, frame_id: int, local_pts: np.ndarray,
                        map_pts: np.ndarray) -> None:
        mid = self.origin + self.size / 2.0
        idx = ((map_pts[:, 0] >= mid[0]).astype(int)
               + 2 * (map_pts[:, 1] >= mid[1]).astype(int)
               + 4 * (map_pts[:, 2] >= mid[2]).astype(int))
        for child_idx in np.unique(idx):
            mask = idx == child_idx
            self.children[child_idx].add(frame_id, local_pts[mask], map_pts[mask])

    def pooled_map_points(self) -> np.ndarray:
        chunks = [c for chunks in self.frames_map.values() for c in chunks]
        return np.vstack(chunks) if chunks else np.zeros((0, 3))

    def frame_local_points(self, frame_id: int) -> np.ndarray:
        chunks = self.frames_local.get(frame_id, [])
        return np.vstack(chunks) if chunks else np.zeros((0, 3))

    def drop_frame(self, frame_id: int) -> None:
        self.frames_local.pop(frame_id, None)
        self.frames_map.pop(frame_id, None)

    def subdivide(self) -> None:
        # children are indexed x + 2y + 4z to match _route_children
        half = self.size / 2.0
        self.children = []
        for cz in (0, 1):
            for cy in (0, 1):
                for cx in (0, 1):
                    origin = self.origin + half * np.array([cx, cy, cz], dtype=float)
                    self.children.append(AdaptiveVoxel(origin, half, self.depth + 1))
        frames_local, frames_map = self.frames_local, self.frames_map
        self.frames_local, self.frames_map = {}, {}
        for frame_id in frames_local:
            for local_pts, map_pts in zip(frames_local[frame_id], frames_map[frame_id]):
                self._route_children(frame_id, local_pts, map_pts)

    def leaves(self):
        if self.children is None:
            yield self
        else:
            for child in self.children:
                yield from child.leaves()


def fit_plane_pca(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(eigenvalues ascending, eigenvectors, centroid) of the point scatter.

    Eigenvalues are variances (scatter / N), so thresholds are in m^2.
    """
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered / points.shape[0]
    w, V = np.linalg.eigh(cov)
    return w, V, centroid


def fit_or_subdivide(voxel: AdaptiveVoxel, map_obj: "HAVoxelMap") -> None:
    """Fit a plane landmark to the voxel or split it into octants and recurse.

    Voxels below the point threshold stay unfit (retried as points arrive);
    planar voxels whose plane passes through the origin are rejected for good
    because the closest-point chart cannot represent them.
    """
    if voxel.landmark_id is not None or voxel.rejected:
        return
    if voxel.children is not None:
        for child in voxel.children:
            fit_or_subdivide(child, map_obj)
        return
    cfg = map_obj.cfg
    if voxel.point_count() < cfg.n_min:
        return
    pts = voxel.pooled_map_points()
    w, V, centroid = fit_plane_pca(pts)
    planar = w[0] <= cfg.planarity_lam3 and w[0] <= cfg.planarity_ratio * w[1]
    if planar:
        n = V[:, 0] / np.linalg.norm(V[:, 0])
        d = -float(n @ centroid)
        if d < 0.0:
            n, d = -n, -d
        if d < MIN_PLANE_OFFSET:
            voxel.rejected = True
            return
        voxel.landmark_id = map_obj._new_landmark(plane_to_cp(Plane(n, d)), voxel)
        return
    if voxel.depth < cfg.d_max:
        voxel.subdivide()
        for child in voxel.children:
            fit_or_subdivide(child, map_obj)


class HAVoxelMap:
    """Hash adaptive voxel map: spatial hash of root voxels plus landmarks."""

    def __init__(self, cfg: VoxelMapConfig | None = None):
        self.cfg = cfg or VoxelMapConfig()
        self.root: dict[tuple[int, int, int], AdaptiveVoxel] = {}
        self.landmarks: dict[int, PlaneLandmark] = {}
        self._voxel_of: dict[int, AdaptiveVoxel] = {}
        self._next_id = 0

    def _new_landmark(self, cp: CpPlane, voxel: AdaptiveVoxel) -> int:
        lid = self._next_id
        self._next_id += 1
        self.landmarks[lid] = PlaneLandmark(lid, cp)
        self._voxel_of[lid] = voxel
        return lid

    def insert_frame(self, points_local, pose: Pose, frame_id: int) -> None:
        """Bucket a frame's local points into root voxels by map position."""
        pts = np.asarray(points_local, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected (N, 3) points, got {pts.shape}")
        if pts.shape[0] == 0:
            return
        map_pts = pose.apply(pts)
        keys = np.floor(map_pts / self.cfg.r_max).astype(int)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        for u, key_row in enumerate(uniq):
            key = tuple(int(v) for v in key_row)
            voxel = self.root.get(key)
            if voxel is None:
                origin = np.array(key, dtype=float) * self.cfg.r_max
                voxel = AdaptiveVoxel(origin, self.cfg.r_max, 0)
                self.root[key] = voxel
            mask = inverse == u
            voxel.add(frame_id, pts[mask], map_pts[mask])

    def fit_pending(self) -> None:
        """Run the fit-or-subdivide pass over every root voxel."""
        for key in sorted(self.root):
            fit_or_subdivide(self.root[key], self)

    def voxel_for(self, p) -> AdaptiveVoxel | None:
        """Leaf voxel containing a map-frame point, descending children."""
        voxel = self.root.get(voxel_key(p, self.cfg.r_max))
        p = np.asarray(p, dtype=float)
        while voxel is not None and voxel.children is not None:
            mid = voxel.origin + voxel.size / 2.0
            idx = int(p[0] >= mid[0]) + 2 * int(p[1] >= mid[1]) + 4 * int(p[2] >= mid[2])
            voxel = voxel.children[idx]
        return voxel

    def build_window(self, frames: list[tuple[int, Pose]]) -> Window:
        """Window over the given keyframes from the current map state.

        Landmarks with no in-window observations and an empty fixed matrix are
        dropped.  Observation group matrices accumulate the frame's local
        points buffered in the landmark's voxel.
        """
        frame_ids = tuple(fid for fid, _ in frames)
        poses = tuple(pose for _, pose in frames)
        landmarks: dict[int, CpPlane] = {}
        observations: list[Observation] = []
        fixed: dict[int, GroupMatrix] = {}
        for lid in sorted(self.landmarks):
            lm = self.landmarks[lid]
            voxel = self._voxel_of.get(lid)
            obs_here = []
            if voxel is not None:
                for k, fid in enumerate(frame_ids):
                    local = voxel.frame_local_points(fid)
                    if local.shape[0] > 0:
                        obs_here.append(Observation(k, lid, GroupMatrix.from_points(local)))
            if not obs_here and lm.fixed.n == 0:
                continue
            landmarks[lid] = lm.plane
            observations.extend(obs_here)
            if lm.fixed.n > 0:
                fixed[lid] = lm.fixed
        window = Window(poses, landmarks, tuple(observations), fixed, frame_ids)
        if window.n_terms() == 0:
            raise ValueError("window has no measurements; map has no usable landmarks")
        return window

    def update_landmarks(self, window: Window) -> None:
        """Write refined plane estimates back into the map."""
        for lid, cp in window.landmarks.items():
            self.landmarks[lid].plane = cp

    def slide(self, window: Window) -> Window:
        """Marginalize the oldest keyframe out of the window.

        Every landmark the oldest frame observes absorbs that frame's group
        matrix, transformed by the frame's (optimized) pose, into its fixed
        matrix; the frame's buffers leave the map and the window shrinks.
        """
        if not window.poses:
            raise ValueError("cannot slide an empty window")
        oldest_pose = window.poses[0]
        oldest_id = window.frame_ids[0]
        new_fixed = dict(window.fixed)
        for obs in window.observations:
            if obs.frame != 0:
                continue
            folded = marginalize_into_fixed(obs.matrix, oldest_pose)
            lm = self.landmarks[obs.landmark]
            lm.fixed = merge(lm.fixed, folded)
            new_fixed[obs.landmark] = lm.fixed
        for voxel in self._voxel_of.values():
            voxel.drop_frame(oldest_id)
        observations = tuple(Observation(obs.frame - 1, obs.landmark, obs.matrix)
                             for obs in window.observations if obs.frame != 0)
        keep = set(lid for _, lid, _ in observations) | set(new_fixed)
        landmarks = {lid: cp for lid, cp in window.landmarks.items() if lid in keep}
        fixed = {lid: g for lid, g in new_fixed.items() if lid in landmarks}
        return Window(window.poses[1:], landmarks, observations, fixed,
                      window.frame_ids[1:])
