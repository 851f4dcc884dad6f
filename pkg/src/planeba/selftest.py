"""Built-in consistency suites: FD derivative checks, clustering identity,
and Schur-vs-dense equivalence.

Each check takes the functions under test as parameters (defaulting to the
real implementations) so a corrupted double can be injected to prove the
harness actually detects failures.
"""

from __future__ import annotations

import numpy as np

from .derivatives import fixed_linearization, integrated_linearization
from .geometry import CpPlane, Pose, cp_to_plane, plane_to_cp
from .group_metrics import (
    GroupMatrix,
    fixed_msgm,
    group_cost,
    marginalize_into_fixed,
    msgm,
)
from .solver import Observation, Window, assemble, dense_system, schur_solve
from .synthetic import SceneSpec, fd_gradient, fd_hessian, generate, perturb_pose


def _random_instance(rng, max_points: int = 200):
    t = rng.uniform(-2.0, 2.0, 3)
    phi = rng.uniform(-1.2, 1.2, 3)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    cp = CpPlane(direction * rng.uniform(0.3, 3.0))
    pts = rng.uniform(-3.0, 3.0, size=(int(rng.integers(1, max_points + 1)), 3))
    return Pose(t, phi), cp, GroupMatrix.from_points(pts)


def check_clustering_identity(trials: int = 200, seed: int = 0, tol: float = 1e-9,
                              cost_fn=group_cost) -> tuple[bool, str]:
    """Group metric vs brute-force per-point sum, relative tolerance."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        pose, cp, _ = _random_instance(rng)
        plane = cp_to_plane(cp)
        pts = rng.uniform(-3.0, 3.0, size=(int(rng.integers(1, 501)), 3))
        g = GroupMatrix.from_points(pts)
        dist = pose.apply(pts) @ plane.n + plane.d
        brute = float(dist @ dist)
        got = cost_fn(plane, pose, g)
        worst = max(worst, abs(got - brute) / max(brute, 1e-12))
    ok = worst < tol
    return ok, f"clustering identity: max rel err {worst:.3e} (tol {tol:.0e})"


def check_derivatives(trials: int = 100, seed: int = 0,
                      grad_rel_tol: float = 1e-5, hess_abs_tol: float = 1e-4,
                      integrated_fn=integrated_linearization,
                      fixed_fn=fixed_linearization) -> tuple[bool, str]:
    """Analytic gradient/Hessian vs central differences, both charts."""
    rng = np.random.default_rng(seed)
    worst_g = worst_h = 0.0
    for _ in range(trials):
        pose, cp, g = _random_instance(rng)

        def metric(x):
            return msgm(cp_to_plane(CpPlane(x[6:9])), Pose(x[0:3], x[3:6]), g)

        def grad(x):
            return integrated_fn(Pose(x[0:3], x[3:6]), CpPlane(x[6:9]), g).gradient

        x0 = np.concatenate([pose.t, pose.phi, cp.vec])
        lin = integrated_fn(pose, cp, g)
        fd_g = fd_gradient(metric, x0, step=1e-6)
        worst_g = max(worst_g, np.max(np.abs(fd_g - lin.gradient))
                      / max(np.max(np.abs(lin.gradient)), 1e-12))
        fd_h = fd_hessian(grad, x0, step=1e-5)
        worst_h = max(worst_h, np.max(np.abs(fd_h - lin.hessian)))

        def fmetric(y):
            return fixed_msgm(cp_to_plane(CpPlane(y)), g)

        def fgrad(y):
            return fixed_fn(CpPlane(y), g).gradient

        flin = fixed_fn(cp, g)
        fd_g = fd_gradient(fmetric, cp.vec, step=1e-6)
        worst_g = max(worst_g, np.max(np.abs(fd_g - flin.gradient))
                      / max(np.max(np.abs(flin.gradient)), 1e-12))
        fd_h = fd_hessian(fgrad, cp.vec, step=1e-5)
        worst_h = max(worst_h, np.max(np.abs(fd_h - flin.hessian)))
    ok = worst_g < grad_rel_tol and worst_h < hess_abs_tol
    return ok, (f"derivatives: grad rel err {worst_g:.3e} (tol {grad_rel_tol:.0e}), "
                f"hessian abs err {worst_h:.3e} (tol {hess_abs_tol:.0e})")


def random_window(rng, n_poses: int, n_planes: int, points_per: int = 25,
                  sigma: float = 0.01, with_fixed: bool = False) -> Window:
    """Small perturbed window for solver checks."""
    spec = SceneSpec(frames=n_poses, planes=n_planes, points_per=points_per,
                     sigma=sigma, seed=int(rng.integers(0, 2 ** 31)))
    scene = generate(spec)
    poses = [scene.poses[0]]
    poses += [perturb_pose(p, 0.05, 0.02, rng) for p in scene.poses[1:]]
    landmarks = {j: plane_to_cp(pl) for j, pl in enumerate(scene.planes)}
    observations = []
    fixed = {}
    for i in range(n_poses):
        for j in range(n_planes):
            g = GroupMatrix.from_points(scene.points[(i, j)])
            if with_fixed and i == 0:
                fixed[j] = marginalize_into_fixed(g, scene.poses[0])
            else:
                observations.append(Observation(i, j, g))
    return Window(tuple(poses), landmarks, tuple(observations), fixed)


def check_schur_equivalence(trials: int = 20, seed: int = 0, tol: float = 1e-8,
                            solve_fn=schur_solve) -> tuple[bool, str]:
    """Schur-complement solution vs dense solve of the same damped system."""
    from dataclasses import replace

    from .solver import SingularSystemError

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n_poses = int(rng.integers(2, 6))
        n_planes = int(rng.integers(3, 21))
        window = random_window(rng, n_poses, n_planes)
        lam = float(rng.uniform(0.001, 0.1))
        sys = assemble(window, None, gauge=(0,), lam=lam)
        while True:  # escalate damping until factorizable, as the LM loop does
            try:
                pose_d, lm_d = solve_fn(sys)
                break
            except SingularSystemError:
                sys = replace(sys, lam=sys.lam * 4.0)
        H, b = dense_system(sys)
        ref = np.linalg.solve(H, b)
        got = np.concatenate(
            [pose_d[f] for f in sys.free_frames]
            + [lm_d[lid] for lid in sys.landmark_ids])
        worst = max(worst, np.linalg.norm(got - ref) / max(np.linalg.norm(ref), 1e-300))
    ok = worst < tol
    return ok, f"schur equivalence: max rel err {worst:.3e} (tol {tol:.0e})"


def run_selftest(fast: bool = False) -> tuple[bool, list[str]]:
    """Run all suites; returns overall pass plus one line per suite."""
    scale = 4 if fast else 1
    checks = [
        check_clustering_identity(trials=200 // scale),
        check_derivatives(trials=100 // scale),
        check_schur_equivalence(trials=20 // scale),
    ]
    lines = [("PASS " if ok else "FAIL ") + msg for ok, msg in checks]
    return all(ok for ok, _ in checks), lines
