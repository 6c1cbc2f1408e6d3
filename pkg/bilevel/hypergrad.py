"""Hypergradient estimators.

   AID    solves hess_yy g(x, y^D) v = grad_y f(x, y^D) by CG and returns
          grad_x f - jac_xy g v.
   ITD    differentiates through the stored gradient descent trajectory
          with a single backward sweep (D JVPs, D-1 HVPs).
   STOCBIO replaces the linear solve with a sampled, truncated Neumann
          series whose batch sizes grow geometrically towards the last term.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from bilevel.errors import BilevelError, ErrorCode, require
from bilevel.inner import InnerTrajectory, cg_solve
from bilevel.log import log
from bilevel.problem import (UPPER, CostCounters, CountedProblem, counted,
                             sample_batch)
from bilevel.streams import HESSIAN, JVP, stream_for

AID = 'AID'
ITD = 'ITD'
STOCBIO = 'STOCBIO'


@dataclass
class HypergradEstimate:
    """An estimate of grad Phi(x) plus what it took to build it.

       v_out is the final CG iterate for AID (the next warm start), None
       for the other methods.
    """

    grad: np.ndarray
    method: str
    diagnostics: Dict = field(default_factory=dict)
    v_out: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.grad)):
            raise BilevelError(ErrorCode.NON_FINITE, f'{self.method} estimate is not finite')

    def describe(self) -> str:
        """Compact one-field summary used in trace rows."""
        diag = self.diagnostics
        if self.method == AID:
            return f"cg_iters={diag['cg_iterations']};cg_res={diag['cg_residual']:.6e}"
        if self.method == ITD:
            return f"D={diag['D']}"
        return f"Q={diag['Q']};samples={diag['samples']}"


@dataclass(frozen=True)
class NeumannSchedule:
    """Truncation order Q, step eta and the batch sizes |B_1|..|B_Q|."""

    Q: int
    eta: float
    sizes: List[int]
    B: int

    @property
    def total(self) -> int:
        """Total number of Hessian samples drawn per estimate."""
        return int(sum(self.sizes))


def aid_estimate(prob,
                 x,
                 yD,
                 v0,
                 N: int,
                 counters: Optional[CostCounters] = None,
                 tol: float = 0.0) -> HypergradEstimate:
    """Approximate implicit differentiation at (x, yD) with N CG steps from v0.
       Charges (gc_f, jv_g, hv_g) = (2, 1, iterations used).
    """
    oracle = counted(prob, counters)
    x = np.asarray(x, dtype=np.float64)
    yD = np.asarray(yD, dtype=np.float64)
    grad_x = oracle.upper_grad_x(x, yD)
    grad_y = oracle.upper_grad_y(x, yD)
    base = oracle.prob if isinstance(oracle, CountedProblem) else oracle
    cg = cg_solve(lambda vec: base.lower_hvp(x, yD, vec), grad_y, v0, N, tol, counters)
    grad = grad_x - oracle.lower_jvp(x, yD, cg.v)
    return HypergradEstimate(grad,
                             AID,
                             diagnostics={
                                 'cg_iterations': cg.iterations,
                                 'cg_residual': cg.residual,
                                 'N': N,
                             },
                             v_out=cg.v.copy())


def itd_estimate(prob,
                 traj: InnerTrajectory,
                 counters: Optional[CostCounters] = None,
                 x=None) -> HypergradEstimate:
    """Backpropagates f(x, y^D(x)) through the trajectory:

         r <- grad_y f(x, y^D)
         for t = D-1 .. 0:  grad -= alpha jac_xy g(x, y^t) r
                            r    -= alpha hess_yy g(x, y^t) r   (t > 0)

       Charges (gc_f, jv_g, hv_g) = (2, D, D-1).
    """
    if x is not None and not np.array_equal(np.asarray(x, dtype=np.float64), traj.x):
        raise BilevelError(ErrorCode.MISMATCH, 'trajectory was computed at a different x')
    if traj.points.shape[1] != prob.q:
        raise BilevelError(ErrorCode.MISMATCH,
                           f'trajectory points have length {traj.points.shape[1]}, '
                           f'problem expects {prob.q}')
    oracle = counted(prob, counters)
    x = traj.x
    alpha = traj.alpha
    D = traj.steps
    yD = traj.final
    grad = oracle.upper_grad_x(x, yD).astype(np.float64)
    r = oracle.upper_grad_y(x, yD)
    for t in range(D - 1, -1, -1):
        grad = grad - alpha * oracle.lower_jvp(x, traj.points[t], r)
        if t > 0:
            r = r - alpha * oracle.lower_hvp(x, traj.points[t], r)
    return HypergradEstimate(grad, ITD, diagnostics={'D': D})


def build_schedule(Q: int, B: int, eta: float, mu: float) -> NeumannSchedule:
    """Batch sizes |B_{Q+1-j}| = ceil(B Q (1 - eta mu)^{j-1}) for j = 1..Q,
       each at least 1, so the last Neumann terms get the largest batches.
    """
    require(int(Q) == Q and Q >= 1, f'Q must be a positive integer, got {Q}')
    require(int(B) == B and B >= 1, f'B must be a positive integer, got {B}')
    require(math.isfinite(eta) and eta > 0.0, f'eta must be positive, got {eta}')
    contraction = eta * mu
    require(0.0 < contraction < 1.0, f'eta*mu must lie in (0, 1), got {contraction}')
    sizes = [0] * Q
    for j in range(1, Q + 1):
        raw = B * Q * (1.0 - contraction)**(j - 1)
        # round first so 12.000000000000002 does not ceil to 13
        sizes[Q - j] = max(1, int(math.ceil(round(raw, 9))))
    return NeumannSchedule(int(Q), float(eta), sizes, int(B))


# pylint: disable=too-many-arguments
def neumann_vq(prob,
               x,
               yD,
               v0,
               sched: NeumannSchedule,
               rng,
               counters: Optional[CostCounters] = None) -> np.ndarray:
    """v_Q = eta sum_{i=0}^{Q} r_i with r_Q = v0 and
       r_{i-1} = r_i - eta hess_yy G(x, yD; B_i) r_i for i = Q..1.

       Each B_i comes from its own substream. Charges sum(sizes) to hv_g.
    """
    if sched.eta > 1.0 / prob.constants.L * (1.0 + 1e-12):
        log(f'WARNING: eta = {sched.eta:.6g} exceeds 1/L = {1.0 / prob.constants.L:.6g}')
    oracle = counted(prob, counters)
    x = np.asarray(x, dtype=np.float64)
    yD = np.asarray(yD, dtype=np.float64)
    r = np.array(v0, dtype=np.float64)
    total = r.copy()
    for i in range(sched.Q, 0, -1):
        batch = sample_batch(prob, sched.sizes[i - 1], stream_for(rng, HESSIAN, i))
        r = r - sched.eta * oracle.lower_hvp(x, yD, r, batch)
        total += r
    return sched.eta * total


def stocbio_estimate(prob,
                     x,
                     yD,
                     sched: NeumannSchedule,
                     Df: int,
                     Dg: int,
                     rng,
                     counters: Optional[CostCounters] = None) -> HypergradEstimate:
    """grad_x F(x, yD; D_F) - jac_xy G(x, yD; D_G) v_Q.

       The same D_F batch feeds both grad_x F and the Neumann start
       v0 = grad_y F(x, yD; D_F). Charges 2*Df to gc_f, Dg to jv_g and the
       schedule total to hv_g.
    """
    require(int(Df) == Df and Df >= 1, f'Df must be a positive integer, got {Df}')
    require(int(Dg) == Dg and Dg >= 1, f'Dg must be a positive integer, got {Dg}')
    oracle = counted(prob, counters)
    x = np.asarray(x, dtype=np.float64)
    yD = np.asarray(yD, dtype=np.float64)
    batch_f = sample_batch(prob, Df, stream_for(rng, UPPER, 0), level=UPPER)
    grad_x = oracle.upper_grad_x(x, yD, batch_f)
    v0 = oracle.upper_grad_y(x, yD, batch_f)
    v_q = neumann_vq(prob, x, yD, v0, sched, rng, counters)
    batch_g = sample_batch(prob, Dg, stream_for(rng, JVP, 0))
    grad = grad_x - oracle.lower_jvp(x, yD, v_q, batch_g)
    return HypergradEstimate(grad,
                             STOCBIO,
                             diagnostics={
                                 'Q': sched.Q,
                                 'samples': sched.total + 2 * Df + Dg,
                             })
