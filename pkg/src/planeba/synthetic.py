"""Deterministic synthetic plane scenes plus the brute-force oracles.

Scenes carry ground-truth poses and planes, per-(frame, plane) local point
sets, and a pre-perturbed initial trajectory.  Points are drawn per-stream
from an RNG keyed by (seed, frame, plane) so generation is reproducible and
independent of iteration order.  The per-point cost and the central-difference
helpers here are the independent oracles the analytic modules are verified
against.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .geometry import Plane, Pose, compose, invert
from .ioutil import atomic_write_text

# Gaussian normal-direction noise is clipped here so the generation contract
# (every point within 4 sigma of its plane) holds deterministically.
NOISE_CLIP_SIGMAS = 4.0


@dataclass(frozen=True)
class SceneSpec:
    """Counts, noise, and extent of a generated scene."""

    frames: int = 10
    planes: int = 50
    points_per: int = 40        # points per plane per frame
    sigma: float = 0.0          # normal-direction noise std (m)
    extent: float = 6.0         # half-width of the scene box (m)
    patch: float = 0.6          # plane patch half-width (m)
    outlier_frac: float = 0.0   # fraction of points replaced by uniform noise
    init_pos_noise: float = 0.005   # odometry drift per step (m)
    init_rot_noise: float = 0.002   # odometry drift per step (rad)
    dt: float = 0.1             # keyframe spacing (s)
    seed: int = 0


@dataclass(frozen=True, eq=False)
class Scene:
    spec: SceneSpec
    poses: tuple[Pose, ...]
    planes: tuple[Plane, ...]
    points: dict = field(repr=False)  # (frame, plane) -> (N, 3) local points
    init_poses: tuple[Pose, ...] = ()
    corrupted_planes: tuple[int, ...] = ()  # planes carrying the outlier mass

    @property
    def timestamps(self) -> np.ndarray:
        return np.arange(len(self.poses)) * self.spec.dt


def _trajectory(spec: SceneSpec) -> list[Pose]:
    """Smooth trajectory well inside the scene box, angles within the chart."""
    poses = []
    for i in range(spec.frames):
        t = np.array([
            0.15 * i,
            0.5 * math.sin(0.3 * i),
            0.25 * math.cos(0.4 * i) - 0.25,
        ])
        phi = np.array([
            0.06 * math.sin(0.25 * i),
            0.05 * math.sin(0.2 * i + 0.7),
            0.08 * math.sin(0.15 * i),
        ])
        poses.append(Pose(t, phi))
    return poses


PATCH_SEPARATION = 0.35  # m between patch regions of different planes
MIN_PLANE_D = 0.2        # m; sampled planes stay clear of the origin


def _sample_planes(spec: SceneSpec) -> tuple[list[Plane], list[np.ndarray]]:
    """Random-normal plane patches on a jittered lattice, |d| >= 0.2 m.

    Lattice spacing keeps patch regions of different planes apart, the way
    real walls and floors behave; interpenetrating patches would manufacture
    mixed-surface voxel landmarks no estimator could fit.
    """
    rng = np.random.default_rng([spec.seed, 7])
    radius = spec.patch * math.sqrt(2.0)
    n_cells = max(2, math.ceil(spec.planes ** (1.0 / 3.0)))
    spacing = 2.0 * spec.extent / n_cells
    jitter = spacing - 2.0 * radius - PATCH_SEPARATION
    if jitter < 0.0:
        raise ValueError(
            f"cannot separate {spec.planes} patches of half-width {spec.patch} "
            f"inside extent {spec.extent}; enlarge the extent or shrink the patches")
    centers_1d = -spec.extent + spacing * (np.arange(n_cells) + 0.5)
    cells = [np.array([x, y, z]) for x in centers_1d for y in centers_1d
             for z in centers_1d]
    cells = [c for c in cells if np.linalg.norm(c) > MIN_PLANE_D + jitter]
    if len(cells) < spec.planes:
        raise ValueError(f"only {len(cells)} usable lattice cells for "
                         f"{spec.planes} planes")
    order = rng.permutation(len(cells))[:spec.planes]
    planes, centers = [], []
    for idx in order:
        for _attempt in range(100):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            center = cells[idx] + rng.uniform(-0.5, 0.5, size=3) * jitter
            d = -float(n @ center)
            if abs(d) >= MIN_PLANE_D:
                break
        else:
            raise ValueError("failed to orient a patch clear of the origin")
        planes.append(Plane(n, d))
        centers.append(center)
    return planes, centers


def _plane_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, a)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


# Outlier mass concentrates on a subset of "unstructured" planes at this rate,
# leaving the rest clean: vegetation-like surfaces among solid walls.  Spread
# thinly over every plane, group-level reweighting could not isolate anything.
CORRUPTED_STREAM_RATE = 0.5


def _corrupted_planes(spec: SceneSpec) -> tuple[int, ...]:
    if spec.outlier_frac <= 0.0:
        return ()
    n_bad = min(spec.planes,
                math.ceil(spec.planes * spec.outlier_frac / CORRUPTED_STREAM_RATE))
    rng = np.random.default_rng([spec.seed, 5])
    return tuple(sorted(int(j) for j in
                        rng.choice(spec.planes, size=n_bad, replace=False)))


def generate(spec: SceneSpec) -> Scene:
    """Build a deterministic scene for the spec; same seed, same scene."""
    if spec.frames < 1 or spec.planes < 1 or spec.points_per < 1:
        raise ValueError("scene needs at least one frame, plane, and point")
    poses = _trajectory(spec)
    planes, centers = _sample_planes(spec)
    corrupted = _corrupted_planes(spec)
    stream_rate = (spec.outlier_frac * spec.planes / len(corrupted)
                   if corrupted else 0.0)
    points: dict = {}
    for i, pose in enumerate(poses):
        inv = invert(pose)
        for j, plane in enumerate(planes):
            rng = np.random.default_rng([spec.seed, 1000 + i, j])
            u, v = _plane_basis(plane.n)
            a = rng.uniform(-spec.patch, spec.patch, size=spec.points_per)
            b = rng.uniform(-spec.patch, spec.patch, size=spec.points_per)
            eps = rng.normal(0.0, spec.sigma, size=spec.points_per) if spec.sigma > 0 \
                else np.zeros(spec.points_per)
            eps = np.clip(eps, -NOISE_CLIP_SIGMAS * spec.sigma,
                          NOISE_CLIP_SIGMAS * spec.sigma)
            map_pts = centers[j] + np.outer(a, u) + np.outer(b, v) + np.outer(eps, plane.n)
            if j in corrupted:
                mask = rng.random(spec.points_per) < stream_rate
                n_out = int(mask.sum())
                if n_out:
                    map_pts[mask] = rng.uniform(-spec.extent, spec.extent, size=(n_out, 3))
            points[(i, j)] = inv.apply(map_pts)

    # Initial trajectory: ground-truth increments corrupted by per-step noise,
    # composed into a drifting odometry estimate; the first pose stays exact.
    init_rng = np.random.default_rng([spec.seed, 2])
    init = [poses[0]]
    for prev, cur in zip(poses, poses[1:]):
        rel = compose(invert(prev), cur)
        noisy = perturb_pose(rel, spec.init_pos_noise, spec.init_rot_noise, init_rng)
        init.append(compose(init[-1], noisy))
    return Scene(spec, tuple(poses), tuple(planes), points, tuple(init), corrupted)


def perturb_pose(pose: Pose, pos_sigma: float, rot_sigma: float, rng) -> Pose:
    """Pose with Gaussian offsets on translation and Euler angles."""
    return Pose(pose.t + rng.normal(0.0, pos_sigma, size=3),
                pose.phi + rng.normal(0.0, rot_sigma, size=3))


def standard_ba_cost(poses, planes, obs_points, fixed_points=None) -> float:
    """Point-by-point squared-distance sum: the brute-force cost oracle.

    obs_points maps (frame, plane) to (N, 3) local points; fixed_points maps a
    plane index to (N, 3) map-frame points.  No group matrices involved.
    """
    total = 0.0
    for (i, j), pts in obs_points.items():
        mapped = poses[i].apply(np.asarray(pts, dtype=float))
        dist = mapped @ planes[j].n + planes[j].d
        total += float(dist @ dist)
    for j, pts in (fixed_points or {}).items():
        dist = np.asarray(pts, dtype=float) @ planes[j].n + planes[j].d
        total += float(dist @ dist)
    return total


def fd_gradient(f, x, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for k in range(x.size):
        hi, lo = x.copy(), x.copy()
        hi[k] += step
        lo[k] -= step
        fp, fm = f(hi), f(lo)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError(f"non-finite evaluation while differencing component {k}")
        grad[k] = (fp - fm) / (2.0 * step)
    return grad


def fd_jacobian(f, x, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector-valued function (rows = outputs)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        hi, lo = x.copy(), x.copy()
        hi[k] += step
        lo[k] -= step
        fp, fm = np.asarray(f(hi), dtype=float), np.asarray(f(lo), dtype=float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise ValueError(f"non-finite evaluation while differencing component {k}")
        cols.append((fp - fm) / (2.0 * step))
    return np.stack(cols, axis=-1)


def fd_hessian(grad_fn, x, step: float = 1e-5) -> np.ndarray:
    """Central differences of a gradient function; the Hessian oracle."""
    return fd_jacobian(grad_fn, x, step=step)


# --- scene directory format --------------------------------------------------
# One directory per scene: frames/frame_NNNN.xyz (ASCII "x y z" per line),
# gt.tum and init.tum trajectories, spec.cfg as key=value text.

def frame_points(scene: Scene, i: int) -> np.ndarray:
    """All local points of frame i, planes concatenated in index order."""
    return np.vstack([scene.points[(i, j)] for j in range(len(scene.planes))])


def save_scene(scene: Scene, outdir) -> None:
    from .geometry import write_tum

    outdir = os.fspath(outdir)
    os.makedirs(os.path.join(outdir, "frames"), exist_ok=True)
    stamps = scene.timestamps
    for i in range(len(scene.poses)):
        pts = frame_points(scene, i)
        text = "\n".join(" ".join(f"{v:.9f}" for v in row) for row in pts) + "\n"
        atomic_write_text(os.path.join(outdir, "frames", f"frame_{i:04d}.xyz"), text)
    write_tum(os.path.join(outdir, "gt.tum"), zip(stamps, scene.poses))
    write_tum(os.path.join(outdir, "init.tum"), zip(stamps, scene.init_poses))
    lines = [f"{f.name} = {getattr(scene.spec, f.name)}" for f in fields(scene.spec)]
    atomic_write_text(os.path.join(outdir, "spec.cfg"), "\n".join(lines) + "\n")


def parse_scene_spec(text: str, base: SceneSpec | None = None) -> SceneSpec:
    """SceneSpec from key=value text; unknown keys rejected."""
    spec = base or SceneSpec()
    known = {f.name: f.type for f in fields(SceneSpec)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"scene spec line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"scene spec line {lineno}: unknown key {key!r}")
        current = getattr(spec, key)
        updates[key] = type(current)(value) if not isinstance(current, int) \
            else int(float(value))
    return replace(spec, **updates)


def load_scene_spec(path) -> SceneSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scene_spec(fh.read())


def read_frame_points(path) -> np.ndarray:
    pts = np.loadtxt(path, dtype=float, ndmin=2)
    if pts.size == 0:
        return np.zeros((0, 3))
    if pts.shape[1] != 3:
        raise ValueError(f"frame file {path} must have 3 columns, got {pts.shape[1]}")
    return pts
