"""Huber reweighting of metric values and their linearizations.

The kernel acts on the mean-square metric itself (already an m^2 quantity),
so the inlier branch is the identity: rho(c) = c for c <= delta, and
rho(c) = 2 sqrt(delta c) - delta beyond, which is C1 at the knee.  A
second-order expansion of rho(c(x)) turns a metric linearization (g, H) into
the reweighted pair (rho' g, rho' H + rho'' g g^T).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .derivatives import MetricLinearization


@dataclass(frozen=True)
class HuberKernel:
    """Kernel with threshold delta (m^2) on the metric value."""

    delta: float

    def __post_init__(self):
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ValueError(f"huber threshold must be positive, got {self.delta!r}")

    def rho(self, c: float) -> tuple[float, float, float]:
        """(rho, rho', rho'') at metric value c >= 0."""
        if not (math.isfinite(c) and c >= 0.0):
            raise ValueError(f"metric value must be non-negative, got {c!r}")
        d = self.delta
        if c <= d:
            return c, 1.0, 0.0
        root = math.sqrt(d * c)
        return 2.0 * root - d, math.sqrt(d / c), -0.5 * math.sqrt(d) * c ** -1.5


@dataclass(frozen=True, eq=False)
class RobustContribution:
    """Reweighted metric value, gradient, and Hessian ready for assembly."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray


def robustify(lin: MetricLinearization, kernel: HuberKernel | None,
              clamp_curvature: bool = False) -> RobustContribution:
    """Normal-equation contribution of one metric under the kernel.

    For inliers (c <= delta, or no kernel) the output carries the input arrays
    unchanged.  Outliers are reweighted to (rho' g, rho' H + rho'' g g^T);
    clamp_curvature zeroes the negative rho'' term, which keeps the
    contribution positive semidefinite at the price of a cruder model.
    """
    if kernel is None:
        return RobustContribution(lin.value, lin.gradient, lin.hessian)
    rho, rho_dot, rho_ddot = kernel.rho(lin.value)
    if lin.value <= kernel.delta:
        return RobustContribution(rho, lin.gradient, lin.hessian)
    if clamp_curvature:
        rho_ddot = max(rho_ddot, 0.0)
    H = rho_dot * lin.hessian
    if rho_ddot != 0.0:
        H = H + rho_ddot * np.outer(lin.gradient, lin.gradient)
    return RobustContribution(rho, rho_dot * lin.gradient, H)
