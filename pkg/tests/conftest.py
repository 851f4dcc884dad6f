"""Shared helpers for building poses, planes, and solver windows in tests."""

import numpy as np
import pytest

from planeba.geometry import CpPlane, Plane, Pose, plane_to_cp
from planeba.group_metrics import GroupMatrix
from planeba.solver import Observation, Window
from planeba.synthetic import SceneSpec, generate, perturb_pose


def random_pose(rng, t_scale=2.0, angle_scale=1.2) -> Pose:
    return Pose(rng.uniform(-t_scale, t_scale, 3),
                rng.uniform(-angle_scale, angle_scale, 3))


def random_plane(rng) -> Plane:
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    return Plane(n, float(rng.uniform(0.2, 3.0) * rng.choice([-1.0, 1.0])))


def random_cp(rng, lo=0.3, hi=3.0) -> CpPlane:
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    return CpPlane(n * rng.uniform(lo, hi))


def on_plane_points(plane: Plane, rng, count: int) -> np.ndarray:
    """Points exactly on the plane (map frame)."""
    a = np.array([1.0, 0.0, 0.0]) if abs(plane.n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(plane.n, a)
    u /= np.linalg.norm(u)
    v = np.cross(plane.n, u)
    foot = -plane.d * plane.n
    coef = rng.uniform(-2.0, 2.0, size=(count, 2))
    return foot + np.outer(coef[:, 0], u) + np.outer(coef[:, 1], v)


def scene_window(scene, pose_noise=0.0, rot_noise=0.0, cp_noise=0.0, seed=0,
                 fixed_from_frame0=False) -> Window:
    """Window built straight from scene points, bypassing the voxel map.

    Frame 0 is kept at ground truth as the gauge anchor; remaining poses and
    optionally the landmark charts are perturbed.
    """
    from planeba.group_metrics import marginalize_into_fixed

    rng = np.random.default_rng(seed)
    poses = [scene.poses[0]]
    for pose in scene.poses[1:]:
        poses.append(perturb_pose(pose, pose_noise, rot_noise, rng)
                     if pose_noise or rot_noise else pose)
    landmarks = {}
    for j, plane in enumerate(scene.planes):
        cp = plane_to_cp(plane).vec
        if cp_noise:
            cp = cp + rng.normal(0.0, cp_noise, 3)
        landmarks[j] = CpPlane(cp)
    observations = []
    fixed = {}
    for i in range(len(scene.poses)):
        for j in range(len(scene.planes)):
            g = GroupMatrix.from_points(scene.points[(i, j)])
            if fixed_from_frame0 and i == 0:
                fixed[j] = marginalize_into_fixed(g, scene.poses[0])
            else:
                observations.append(Observation(i, j, g))
    return Window(tuple(poses), landmarks, tuple(observations), fixed)


@pytest.fixture(scope="session")
def small_scene():
    return generate(SceneSpec(frames=4, planes=8, points_per=25, sigma=0.0, seed=11))
