"""Sliding-window assembly and Schur-complement Levenberg-Marquardt solver.

The objective is the robustified sum of integrated (pose + plane) and fixed
(plane-only) mean-square metrics over a window.  Each integrated term couples
exactly one pose and one landmark, so the normal system is block sparse:
6x6 pose diagonal blocks, 3x3 landmark diagonal blocks, and one 6x3 cross
block per observation.  Landmarks are eliminated by 3x3 solves (Schur
complement), the reduced pose system is factored densely, and landmark
updates are back-substituted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .derivatives import fixed_linearization, integrated_linearization
from .geometry import CpPlane, DegeneratePlaneError, GimbalLockError, Pose
from .group_metrics import (
    GroupMatrix,
    fixed_msgm,
    group_to_text,
    msgm,
)
from .robust_kernel import HuberKernel, robustify
from .geometry import cp_to_plane


class EmptyWindowError(ValueError):
    """Window carries no metric terms."""


class DanglingLandmarkError(ValueError):
    """Landmark with neither observations nor a fixed matrix."""


class SingularSystemError(RuntimeError):
    """Damped system failed to factor; caller should raise the damping."""


class DivergedError(RuntimeError):
    """Optimization produced a non-finite cost; carries the partial report."""

    def __init__(self, message: str, report: "SolveReport"):
        super().__init__(message)
        self.report = report


class Observation(NamedTuple):
    frame: int
    landmark: int
    matrix: GroupMatrix


@dataclass(frozen=True, eq=False)
class Window:
    """Keyframe poses, plane landmarks, and their group-matrix measurements.

    frame_ids are external keyframe identifiers (used by the voxel map when
    sliding); they default to 0..N-1 for hand-built windows.
    """

    poses: tuple[Pose, ...]
    landmarks: dict[int, CpPlane]
    observations: tuple[Observation, ...]
    fixed: dict[int, GroupMatrix]
    frame_ids: tuple[int, ...] = ()

    def __post_init__(self):
        poses = tuple(self.poses)
        observations = tuple(Observation(*o) for o in self.observations)
        frame_ids = tuple(self.frame_ids) if self.frame_ids else tuple(range(len(poses)))
        if len(frame_ids) != len(poses):
            raise ValueError("frame_ids must match poses one to one")
        seen = set()
        for obs in observations:
            if not 0 <= obs.frame < len(poses):
                raise ValueError(f"observation references missing frame {obs.frame}")
            if obs.landmark not in self.landmarks:
                raise ValueError(f"observation references missing landmark {obs.landmark}")
            if obs.matrix.n < 1:
                raise ValueError("observation group matrix must be non-empty")
            key = (obs.frame, obs.landmark)
            if key in seen:
                raise ValueError(f"duplicate observation for frame/landmark {key}")
            seen.add(key)
        for lid, g in self.fixed.items():
            if lid not in self.landmarks:
                raise ValueError(f"fixed matrix references missing landmark {lid}")
            if g.n < 1:
                raise ValueError("fixed group matrix must be non-empty")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "observations", observations)
        object.__setattr__(self, "frame_ids", frame_ids)

    def n_terms(self) -> int:
        return len(self.observations) + len(self.fixed)


@dataclass
class LmConfig:
    """Levenberg-Marquardt settings; defaults follow the reference run setup."""

    lambda_init: float = 0.01
    max_iter: int = 20
    cost_tol: float = 1e-8     # relative cost decrease
    step_tol: float = 1e-10    # infinity norm of the update
    freeze_lambda: bool = False
    gauge_frame: int = 0
    gauss_newton: bool = False
    clamp: str = "auto"        # "auto": clamp curvature only after a failed factorization

    def __post_init__(self):
        if self.clamp not in ("auto", "always"):
            raise ValueError(f"clamp must be 'auto' or 'always', got {self.clamp!r}")


@dataclass
class SolveReport:
    iterations: int = 0
    initial_cost: float = math.nan
    final_cost: float = math.nan
    cost_trace: list = field(default_factory=list)     # accepted costs, initial first
    lambda_trace: list = field(default_factory=list)   # damping per attempted iteration
    accepted: int = 0
    rejected: int = 0
    converged: bool = False
    reason: str = ""

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def total_cost(window: Window, kernel: HuberKernel | None = None) -> float:
    """Robustified sum of integrated and fixed mean-square metrics."""
    if window.n_terms() == 0:
        raise EmptyWindowError("window has no metric terms")
    planes = {lid: cp_to_plane(cp) for lid, cp in window.landmarks.items()}
    total = 0.0
    for obs in window.observations:
        c = msgm(planes[obs.landmark], window.poses[obs.frame], obs.matrix)
        total += kernel.rho(c)[0] if kernel is not None else c
    for lid in window.fixed:
        c = fixed_msgm(planes[lid], window.fixed[lid])
        total += kernel.rho(c)[0] if kernel is not None else c
    return total


@dataclass(frozen=True, eq=False)
class NormalSystem:
    """Block-sparse damped normal equations of one window linearization."""

    free_frames: tuple[int, ...]             # window frame indices kept after gauge fixing
    landmark_ids: tuple[int, ...]
    pose_blocks: np.ndarray                  # (F, 6, 6)
    landmark_blocks: np.ndarray              # (L, 3, 3)
    cross_blocks: dict                       # (frame_pos, lm_pos) -> (6, 3)
    pose_gradient: np.ndarray                # (F, 6)
    landmark_gradient: np.ndarray            # (L, 3)
    lam: float = 0.0


def assemble(window: Window, kernel: HuberKernel | None = None,
             gauge: tuple[int, ...] = (0,), lam: float = 0.0,
             gauss_newton: bool = False, clamp_curvature: bool = False) -> NormalSystem:
    """Scatter per-metric robust contributions into the block layout.

    Gauge-fixed frames are eliminated (rows and columns dropped).  Landmarks
    with neither observations nor a fixed matrix are rejected: they would
    produce a singular block no damping can repair.
    """
    if window.n_terms() == 0:
        raise EmptyWindowError("window has no metric terms")
    for g in gauge:
        if not 0 <= g < len(window.poses):
            raise ValueError(f"gauge frame {g} outside window")
    covered = {lid: False for lid in window.landmarks}
    for obs in window.observations:
        covered[obs.landmark] = True
    for lid in window.fixed:
        covered[lid] = True
    dangling = sorted(lid for lid, ok in covered.items() if not ok)
    if dangling:
        raise DanglingLandmarkError(f"landmarks without measurements: {dangling}")

    free_frames = tuple(i for i in range(len(window.poses)) if i not in set(gauge))
    frame_pos = {f: k for k, f in enumerate(free_frames)}
    landmark_ids = tuple(sorted(window.landmarks))
    lm_pos = {lid: k for k, lid in enumerate(landmark_ids)}

    F, L = len(free_frames), len(landmark_ids)
    pose_blocks = np.zeros((F, 6, 6))
    landmark_blocks = np.zeros((L, 3, 3))
    cross_blocks: dict = {}
    pose_gradient = np.zeros((F, 6))
    landmark_gradient = np.zeros((L, 3))

    for obs in window.observations:
        lin = integrated_linearization(window.poses[obs.frame],
                                       window.landmarks[obs.landmark],
                                       obs.matrix, gauss_newton=gauss_newton)
        contrib = robustify(lin, kernel, clamp_curvature=clamp_curvature)
        lj = lm_pos[obs.landmark]
        landmark_blocks[lj] += contrib.hessian[6:, 6:]
        landmark_gradient[lj] += contrib.gradient[6:]
        if obs.frame in frame_pos:
            fi = frame_pos[obs.frame]
            pose_blocks[fi] += contrib.hessian[:6, :6]
            pose_gradient[fi] += contrib.gradient[:6]
            key = (fi, lj)
            if key in cross_blocks:
                cross_blocks[key] = cross_blocks[key] + contrib.hessian[:6, 6:]
            else:
                cross_blocks[key] = contrib.hessian[:6, 6:]

    for lid, g in window.fixed.items():
        lin = fixed_linearization(window.landmarks[lid], g, gauss_newton=gauss_newton)
        contrib = robustify(lin, kernel, clamp_curvature=clamp_curvature)
        lj = lm_pos[lid]
        landmark_blocks[lj] += contrib.hessian
        landmark_gradient[lj] += contrib.gradient

    return NormalSystem(free_frames, landmark_ids, pose_blocks, landmark_blocks,
                        cross_blocks, pose_gradient, landmark_gradient, lam)


def _damped(block: np.ndarray, lam: float) -> np.ndarray:
    # Marquardt scaling on |diag(H)| handles the mixed meter/radian units and,
    # unlike plain diag(H), can always restore definiteness: the exact Hessian
    # carries negative diagonal entries at poor initializations.
    d = np.abs(np.diag(block))
    floor = 1e-12 * max(float(d.max(initial=0.0)), 1.0)
    return block + lam * np.diag(np.maximum(d, floor))


def dense_system(sys: NormalSystem) -> tuple[np.ndarray, np.ndarray]:
    """Flattened damped matrix and right-hand side -g (debug/oracle surface)."""
    F, L = len(sys.free_frames), len(sys.landmark_ids)
    dim = 6 * F + 3 * L
    H = np.zeros((dim, dim))
    g = np.zeros(dim)
    for k in range(F):
        H[6 * k:6 * k + 6, 6 * k:6 * k + 6] = _damped(sys.pose_blocks[k], sys.lam)
        g[6 * k:6 * k + 6] = sys.pose_gradient[k]
    for j in range(L):
        r = 6 * F + 3 * j
        H[r:r + 3, r:r + 3] = _damped(sys.landmark_blocks[j], sys.lam)
        g[r:r + 3] = sys.landmark_gradient[j]
    for (fi, lj), W in sys.cross_blocks.items():
        r, c = 6 * fi, 6 * F + 3 * lj
        H[r:r + 6, c:c + 3] = W
        H[c:c + 3, r:r + 6] = W.T
    return H, -g


def schur_solve(sys: NormalSystem) -> tuple[dict, dict]:
    """Solve the damped system by landmark elimination and back-substitution.

    Returns (pose deltas keyed by window frame index, landmark deltas keyed by
    landmark id).  Gauge-fixed frames are absent from the pose deltas.
    """
    F, L = len(sys.free_frames), len(sys.landmark_ids)
    lm_inv = np.zeros((L, 3, 3))
    for j in range(L):
        D = _damped(sys.landmark_blocks[j], sys.lam)
        try:
            cho = scipy.linalg.cho_factor(D, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise SingularSystemError(
                f"landmark block {sys.landmark_ids[j]} not positive definite") from exc
        lm_inv[j] = scipy.linalg.cho_solve(cho, np.eye(3))

    bl = -sys.landmark_gradient  # (L, 3)
    if F == 0:
        lm_deltas = {lid: lm_inv[j] @ bl[j] for j, lid in enumerate(sys.landmark_ids)}
        return {}, lm_deltas

    by_lm: dict[int, list[tuple[int, np.ndarray]]] = {}
    for (fi, lj), W in sys.cross_blocks.items():
        by_lm.setdefault(lj, []).append((fi, W))

    S = np.zeros((6 * F, 6 * F))
    rhs = np.zeros(6 * F)
    for k in range(F):
        S[6 * k:6 * k + 6, 6 * k:6 * k + 6] = _damped(sys.pose_blocks[k], sys.lam)
        rhs[6 * k:6 * k + 6] = -sys.pose_gradient[k]
    for lj, entries in by_lm.items():
        inv = lm_inv[lj]
        for fi, W in entries:
            rhs[6 * fi:6 * fi + 6] -= W @ (inv @ bl[lj])
            WD = W @ inv
            for fj, W2 in entries:
                S[6 * fi:6 * fi + 6, 6 * fj:6 * fj + 6] -= WD @ W2.T

    try:
        cho = scipy.linalg.cho_factor(0.5 * (S + S.T), lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystemError("reduced pose system not positive definite") from exc
    dp = scipy.linalg.cho_solve(cho, rhs)

    lm_deltas = {}
    for j, lid in enumerate(sys.landmark_ids):
        resid = bl[j].copy()
        for fi, W in by_lm.get(j, ()):
            resid -= W.T @ dp[6 * fi:6 * fi + 6]
        lm_deltas[lid] = lm_inv[j] @ resid
    pose_deltas = {f: dp[6 * k:6 * k + 6] for k, f in enumerate(sys.free_frames)}
    return pose_deltas, lm_deltas


def _wrap_angle(a: float) -> float:
    if -math.pi < a <= math.pi:
        return a  # already canonical; keep bit-exact
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def update_state(window: Window, pose_deltas: dict, lm_deltas: dict) -> Window:
    """Additive update in the Euler / closest-point chart.

    Raises GimbalLockError or DegeneratePlaneError when a delta leaves the
    valid domain; the LM loop treats that as a rejected step.
    """
    poses = []
    for i, pose in enumerate(window.poses):
        if i in pose_deltas:
            d = np.asarray(pose_deltas[i], dtype=float)
            if d.shape != (6,) or not np.all(np.isfinite(d)):
                raise ValueError(f"pose delta for frame {i} must be a finite 6-vector")
            phi = pose.phi + d[3:]
            phi = np.array([_wrap_angle(phi[0]), phi[1], _wrap_angle(phi[2])])
            poses.append(Pose(pose.t + d[:3], phi))
        else:
            poses.append(pose)
    landmarks = {}
    for lid, cp in window.landmarks.items():
        if lid in lm_deltas:
            d = np.asarray(lm_deltas[lid], dtype=float)
            if d.shape != (3,) or not np.all(np.isfinite(d)):
                raise ValueError(f"landmark delta for {lid} must be a finite 3-vector")
            landmarks[lid] = CpPlane(cp.vec + d)
        else:
            landmarks[lid] = cp
    return Window(tuple(poses), landmarks, window.observations, dict(window.fixed),
                  window.frame_ids)


def _step_norm(pose_deltas: dict, lm_deltas: dict) -> float:
    parts = [np.max(np.abs(d)) for d in pose_deltas.values()]
    parts += [np.max(np.abs(d)) for d in lm_deltas.values()]
    return max(parts) if parts else 0.0


def lm_iterate(window: Window, kernel: HuberKernel | None,
               cfg: LmConfig | None = None) -> tuple[Window, SolveReport]:
    """Levenberg-Marquardt refinement of the window state.

    Each iteration linearizes once, solves the damped system, and accepts the
    tentative state only if the cost strictly decreases (halving the damping);
    rejections revert and quadruple the damping.  Stops on max_iter, relative
    cost decrease below cost_tol, or step norm below step_tol.
    """
    cfg = cfg or LmConfig()
    gauge = (cfg.gauge_frame,)
    if not 0 <= cfg.gauge_frame < len(window.poses):
        raise ValueError(f"gauge frame {cfg.gauge_frame} outside window")

    report = SolveReport()
    cost = total_cost(window, kernel)
    if not math.isfinite(cost):
        report.reason = "initial cost not finite"
        raise DivergedError(report.reason, report)
    report.initial_cost = cost
    report.cost_trace.append(cost)

    lam = cfg.lambda_init
    clamped = cfg.clamp == "always"
    current = window

    while report.iterations < cfg.max_iter:
        if cost == 0.0:
            report.converged = True
            report.reason = "cost reached zero"
            break
        report.iterations += 1
        report.lambda_trace.append(lam)
        sys = assemble(current, kernel, gauge=gauge, lam=lam,
                       gauss_newton=cfg.gauss_newton, clamp_curvature=clamped)
        # Factorization failures escalate the damping on the same
        # linearization; they never reach a state update, so they do not
        # consume the iteration budget.
        deltas = None
        while deltas is None:
            try:
                deltas = schur_solve(sys)
            except SingularSystemError:
                if cfg.clamp == "auto" and not clamped and kernel is not None:
                    # Negative robust curvature can break definiteness;
                    # clamp it before touching the damping.
                    clamped = True
                    sys = assemble(current, kernel, gauge=gauge, lam=lam,
                                   gauss_newton=cfg.gauss_newton,
                                   clamp_curvature=True)
                    continue
                if cfg.freeze_lambda or lam > 1e12:
                    break
                lam *= 4.0
                sys = replace(sys, lam=lam)
        if deltas is None:
            report.rejected += 1
            report.reason = "damped system never became factorizable"
            break
        pose_deltas, lm_deltas = deltas

        step = _step_norm(pose_deltas, lm_deltas)
        if step < cfg.step_tol:
            report.converged = True
            report.reason = "step norm below tolerance"
            break

        try:
            candidate = update_state(current, pose_deltas, lm_deltas)
            new_cost = total_cost(candidate, kernel)
        except (GimbalLockError, DegeneratePlaneError):
            report.rejected += 1
            if not cfg.freeze_lambda:
                lam *= 4.0
            continue
        if not math.isfinite(new_cost):
            report.final_cost = new_cost
            report.reason = "cost became non-finite"
            raise DivergedError(report.reason, report)

        if new_cost < cost:
            current = candidate
            report.accepted += 1
            report.cost_trace.append(new_cost)
            rel = (cost - new_cost) / max(cost, 1e-300)
            cost = new_cost
            if not cfg.freeze_lambda:
                lam *= 0.5
            if rel < cfg.cost_tol:
                report.converged = True
                report.reason = "relative cost decrease below tolerance"
                break
        else:
            report.rejected += 1
            if not cfg.freeze_lambda:
                lam *= 4.0

    if not report.reason:
        report.reason = "iteration limit reached"
    report.final_cost = cost
    return current, report


def window_snapshot(window: Window) -> str:
    """Plain-text dump of a window (poses, planes, group matrices) for debugging."""
    lines = [f"poses {len(window.poses)}"]
    for fid, pose in zip(window.frame_ids, window.poses):
        vals = " ".join(f"{v:.17g}" for v in (*pose.t, *pose.phi))
        lines.append(f"pose {fid} {vals}")
    for lid in sorted(window.landmarks):
        vals = " ".join(f"{v:.17g}" for v in window.landmarks[lid].vec)
        lines.append(f"landmark {lid} {vals}")
    for obs in window.observations:
        lines.append(f"obs {obs.frame} {obs.landmark} {group_to_text(obs.matrix)}")
    for lid in sorted(window.fixed):
        lines.append(f"fixed {lid} {group_to_text(window.fixed[lid])}")
    return "\n".join(lines) + "\n"
