"""Inner loop solvers: gradient descent with the trajectory kept for
   unrolling, stochastic gradient descent for stocBiO, and matrix-free
   conjugate gradient for the linear system of implicit differentiation.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from bilevel.errors import BilevelError, ErrorCode, require
from bilevel.log import log
from bilevel.problem import CostCounters, check_finite, counted, sample_batch
from bilevel.streams import INNER, stream_for

# an iterate this many times larger than (1 + |y0|) counts as divergence
DIVERGENCE_FACTOR = 1e8


@dataclass
class InnerTrajectory:
    """The points y^0..y^D of D gradient steps taken at the upper point x.
       Stored densely, so memory is O(D q).
    """

    x: np.ndarray
    points: np.ndarray
    alpha: float

    @property
    def steps(self) -> int:
        """Number of gradient steps D."""
        return len(self.points) - 1

    @property
    def final(self) -> np.ndarray:
        """The last point y^D."""
        return self.points[-1]


@dataclass
class CgResult:
    """Outcome of cg_solve."""

    v: np.ndarray
    iterations: int
    residual: float
    residuals: List[float] = field(default_factory=list)


def check_stepsize(name: str, value: float, limit: float, warn: bool) -> None:
    """Rejects non-positive stepsizes and warns when value exceeds limit."""
    require(math.isfinite(value) and value > 0.0, f'{name} must be positive, got {value}')
    if warn and value > limit * (1.0 + 1e-12):
        log(f'WARNING: {name} = {value:.6g} exceeds {limit:.6g}')


def guard_divergence(y: np.ndarray, y0_norm: float, step: int, what: str) -> None:
    """Raises DIVERGED if y is non-finite or has left the trust region."""
    if not np.all(np.isfinite(y)) or np.linalg.norm(y) > DIVERGENCE_FACTOR * (1.0 + y0_norm):
        raise BilevelError(ErrorCode.DIVERGED, f'{what} diverged at step {step}')


# pylint: disable=too-many-arguments
def gd_inner(prob,
             x,
             y0,
             alpha: float,
             D: int,
             counters: Optional[CostCounters] = None,
             warn: bool = True) -> InnerTrajectory:
    """Runs D steps y^t = y^{t-1} - alpha grad_y g(x, y^{t-1}) and returns
       every point. Charges D to gc_g.
    """
    require(int(D) == D and D >= 0, f'D must be a non-negative integer, got {D}')
    check_stepsize('alpha', alpha, 1.0 / prob.constants.L, warn)
    x = np.asarray(x, dtype=np.float64)
    y0 = np.asarray(y0, dtype=np.float64)
    check_finite('y0', y0)
    oracle = counted(prob, counters)
    y0_norm = float(np.linalg.norm(y0))
    points = np.empty((D + 1, len(y0)))
    points[0] = y0
    for t in range(1, D + 1):
        points[t] = points[t - 1] - alpha * oracle.lower_grad_y(x, points[t - 1])
        guard_divergence(points[t], y0_norm, t, 'gradient descent')
    return InnerTrajectory(x.copy(), points, float(alpha))


def sgd_inner(prob,
              x,
              y0,
              alpha: float,
              D: int,
              S: int,
              rng,
              counters: Optional[CostCounters] = None,
              warn: bool = True) -> np.ndarray:
    """Runs D stochastic gradient steps with an independent batch of size S
       per step and returns y^D. Charges D*S to gc_g.
    """
    require(int(D) == D and D >= 0, f'D must be a non-negative integer, got {D}')
    require(int(S) == S and S >= 1, f'S must be a positive integer, got {S}')
    consts = prob.constants
    check_stepsize('alpha', alpha, 2.0 / (consts.L + consts.mu), warn)
    x = np.asarray(x, dtype=np.float64)
    y = np.array(y0, dtype=np.float64)
    check_finite('y0', y)
    oracle = counted(prob, counters)
    y0_norm = float(np.linalg.norm(y))
    for t in range(D):
        batch = sample_batch(prob, S, stream_for(rng, INNER, t))
        y = y - alpha * oracle.lower_grad_y(x, y, batch)
        guard_divergence(y, y0_norm, t + 1, 'stochastic gradient descent')
    return y


# pylint: disable=too-many-locals
def cg_solve(hvp: Callable[[np.ndarray], np.ndarray],
             b,
             v0,
             N: int,
             tol: float = 0.0,
             counters: Optional[CostCounters] = None) -> CgResult:
    """Conjugate gradient for hvp(v) = b started at v0.

       Stops after min(N, len(b)) iterations, or as soon as the residual
       norm drops to tol. Each iteration is charged one hv_g; the residual
       of the starting point is not charged.
    """
    require(int(N) == N and N >= 0, f'N must be a non-negative integer, got {N}')
    require(tol >= 0.0, f'tol must be non-negative, got {tol}')
    b = np.asarray(b, dtype=np.float64)
    v = np.array(v0, dtype=np.float64)
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(v))):
        raise BilevelError(ErrorCode.NON_FINITE, 'CG inputs must be finite')
    resid = b - hvp(v) if np.any(v) else b.copy()
    rs = float(np.dot(resid, resid))
    residuals = [math.sqrt(rs)]
    direction = resid.copy()
    limit = min(int(N), len(b))
    iterations = 0
    while iterations < limit and residuals[-1] > tol:
        product = hvp(direction)
        curv = float(np.dot(direction, product))
        if not (math.isfinite(curv) and np.all(np.isfinite(product))):
            raise BilevelError(ErrorCode.NON_FINITE,
                               f'CG produced a non-finite product at iteration {iterations + 1}')
        if curv <= 0.0:
            raise BilevelError(ErrorCode.NOT_SPD,
                               f'CG found curvature {curv:.3g} at iteration {iterations + 1}')
        step = rs / curv
        v += step * direction
        resid -= step * product
        rs_new = float(np.dot(resid, resid))
        iterations += 1
        if counters is not None:
            counters.hv_g += 1
        residuals.append(math.sqrt(rs_new))
        if rs_new == 0.0:
            break
        direction = resid + (rs_new / rs) * direction
        rs = rs_new
    return CgResult(v, iterations, residuals[-1], residuals)
