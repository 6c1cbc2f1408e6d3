"""Ground-truth machinery for checking the estimators: finite differences,
   exact Neumann expectations, and the analysis constants and error bounds.

   The constants are one-sided bounds with loose absolute scale; they are
   used to check that measured errors stay below them, never for tightness.
"""

import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from bilevel.errors import BilevelError, ErrorCode, require
from bilevel.inner import gd_inner
from bilevel.log import log
from bilevel.problem import SmoothnessConstants

# smallest central-difference step accepted before cancellation dominates
MIN_FD_STEP = 1e-10

# largest lower dimension for which a Hessian is assembled densely
MAX_DENSE_DIM = 50


def _power(base: float, exponent: float) -> float:
    """base**exponent with 0**e taken as 0 for e > 0 and 1 otherwise."""
    if base == 0.0:
        return 0.0 if exponent > 0 else 1.0
    return base**exponent


def cg_factor(kappa: float) -> float:
    """(sqrt(kappa) - 1) / (sqrt(kappa) + 1), the CG contraction per step."""
    root = math.sqrt(kappa)
    return (root - 1.0) / (root + 1.0)


def central_difference(fn: Callable[[np.ndarray], float], x, h: float) -> np.ndarray:
    """Coordinate-wise central differences of a scalar function."""
    require(math.isfinite(h) and h >= MIN_FD_STEP,
            f'finite difference step must be at least {MIN_FD_STEP}, got {h}')
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for j in range(len(x)):
        step = np.zeros_like(x)
        step[j] = h
        grad[j] = (fn(x + step) - fn(x - step)) / (2.0 * h)
    return grad


def solve_lower(prob, x, y0=None, tol: float = 1e-12, max_steps: int = 200000) -> np.ndarray:
    """Exact y*(x) if the family has one, otherwise gradient descent at
       alpha = 1/L until |grad_y g| <= tol (1 + |y|).
    """
    if prob.has_oracle:
        return prob.lower_solution(x)
    alpha = 1.0 / prob.constants.L
    y = np.zeros(prob.q) if y0 is None else np.array(y0, dtype=np.float64)
    for _ in range(max_steps):
        grad = prob.lower_grad_y(x, y)
        if np.linalg.norm(grad) <= tol * (1.0 + np.linalg.norm(y)):
            return y
        y = y - alpha * grad
    log(f'WARNING: lower solve stopped after {max_steps} steps')
    return y


def finite_diff_hypergrad(prob, x, h: float = 1e-5) -> np.ndarray:
    """Central differences of x -> f(x, y*(x))."""

    def phi(point):
        return prob.upper_value(point, solve_lower(prob, point))

    return central_difference(phi, x, h)


# pylint: disable=too-many-arguments
def finite_diff_unrolled(prob, x, y0, alpha: float, D: int, h: float = 1e-5) -> np.ndarray:
    """Central differences of x -> f(x, y^D(x)) where y^D(x) is D gradient
       steps from y0, re-run at every perturbed point.
    """

    def unrolled(point):
        traj = gd_inner(prob, point, y0, alpha, D, warn=False)
        return prob.upper_value(point, traj.final)

    return central_difference(unrolled, x, h)


def dense_hessian(prob, x, y) -> np.ndarray:
    """Assembles hess_yy g(x, y) column by column from HVPs against unit vectors."""
    if prob.q > MAX_DENSE_DIM:
        raise BilevelError(ErrorCode.DIMENSION,
                           f'dense Hessian limited to q <= {MAX_DENSE_DIM}, got {prob.q}')
    eye = np.eye(prob.q)
    cols = [prob.lower_hvp(x, y, eye[i]) for i in range(prob.q)]
    hess = np.array(cols).T
    return 0.5 * (hess + hess.T)


def exact_neumann_expectation(prob, x, yD, v0, Q: int, eta: float) -> np.ndarray:
    """eta sum_{q=0}^{Q} (I - eta hess_yy g(x, yD))^q v0, evaluated densely."""
    require(int(Q) == Q and Q >= 0, f'Q must be a non-negative integer, got {Q}')
    hess = dense_hessian(prob, x, yD)
    r = np.array(v0, dtype=np.float64)
    total = r.copy()
    for _ in range(int(Q)):
        r = r - eta * (hess @ r)
        total += r
    return eta * total


# pylint: disable=too-many-instance-attributes
@dataclass
class TheoryBounds:
    """Analysis constants for one set of run parameters.

       L_Phi     smoothness of Phi
       Gamma, delta_DN, Omega   AID-BiO error recursion
       lam, omega, Delta_var, nu   stocBiO tracking recursion
       neumann_bias, neumann_variance   bias and mean square error of v_Q
       sgd_floor   sigma^2/(L mu S), the SGD tracking floor
    """

    L_Phi: float
    Gamma: float
    delta_DN: float
    Omega: float
    lam: float
    omega: float
    Delta_var: float
    nu: float
    neumann_bias: float
    neumann_variance: float
    sgd_floor: float

    def to_dict(self) -> Dict:
        """Returns a JSON friendly dict."""
        return {key: float(value) for key, value in asdict(self).items()}


def _coupling_term(c: SmoothnessConstants) -> float:
    """L + L^2/mu + M tau/mu + L M rho/mu^2"""
    return c.L + c.L**2 / c.mu + c.M * c.tau / c.mu + c.L * c.M * c.rho / c.mu**2


# pylint: disable=too-many-arguments,too-many-locals
def compute_bounds(constants: SmoothnessConstants,
                   alpha: float,
                   beta: float,
                   eta: float,
                   D: int,
                   N: int,
                   Q: int,
                   S: int,
                   Df: int,
                   Dg: int,
                   B: int) -> TheoryBounds:
    """Evaluates every constant literally from its defining formula."""
    c = constants
    require(c.mu > 0.0, 'mu must be positive')
    L, mu, M, tau, rho, kappa = c.L, c.mu, c.M, c.tau, c.rho, c.kappa
    gamma = (3 * L**2 + 3 * tau**2 * M**2 / mu**2 +
             6 * L**2 * (1 + math.sqrt(kappa))**2 * (kappa + rho * M / mu**2)**2)
    delta = (gamma * _power(1 - alpha * mu, D) +
             6 * L**2 * kappa * _power(cg_factor(kappa), 2 * N))
    omega_aid = 8 * (beta * kappa**2 + 2 * beta * M * L / mu**2 +
                     2 * beta * L * M * kappa / mu**2)**2
    contraction = _power((L - mu) / (L + mu), 2 * D)
    coupling = _coupling_term(c)
    lam = contraction * (2 + 4 * beta**2 * L**2 / mu**2 * coupling**2)
    delta_var = (4 * L**2 * M**2 / (mu**2 * Dg) + (8 * L**2 / mu**2 + 2) * M**2 / Df +
                 16 * eta**2 * L**4 * M**2 / (mu**2 * B) +
                 16 * L**2 * M**2 * _power(1 - eta * mu, 2 * Q) / mu**2)
    omega = 4 * beta**2 * L**2 / mu**2 * contraction
    nu = 1.25 * coupling**2
    return TheoryBounds(L_Phi=c.l_phi,
                        Gamma=gamma,
                        delta_DN=delta,
                        Omega=omega_aid,
                        lam=lam,
                        omega=omega,
                        Delta_var=delta_var,
                        nu=nu,
                        neumann_bias=neumann_bias_bound(c, eta, Q),
                        neumann_variance=neumann_variance_bound(c, eta, Q, B, Df),
                        sgd_floor=c.sigma**2 / (L * mu * S))


def neumann_bias_bound(constants: SmoothnessConstants,
                       eta: float,
                       Q: int,
                       M: Optional[float] = None) -> float:
    """|E v_Q - hess^-1 grad_y f| <= M (1 - eta mu)^{Q+1} / mu."""
    M = constants.M if M is None else M
    return M * _power(1 - eta * constants.mu, Q + 1) / constants.mu


def neumann_variance_bound(constants: SmoothnessConstants, eta: float, Q: int, B: int,
                           Df: int) -> float:
    """Mean square error bound of v_Q around hess^-1 grad_y f."""
    L, mu, M = constants.L, constants.mu, constants.M
    return (4 * eta**2 * L**2 * M**2 / (mu**2 * B) +
            4 * _power(1 - eta * mu, 2 * Q + 2) * M**2 / mu**2 + 2 * M**2 / (mu**2 * Df))


def itd_error_bound(constants: SmoothnessConstants, alpha: float, D: int,
                    init_dist: float) -> float:
    """Bound on |grad of f(x, y^D(x)) - grad Phi(x)| after D steps from a
       start at distance init_dist from y*(x).
    """
    L, mu, M, tau, rho = constants.L, constants.mu, constants.M, constants.tau, constants.rho
    base = 1 - alpha * mu
    slope = (L * (L + mu) * _power(base, D / 2) / mu +
             2 * M * (tau * mu + L * rho) * _power(base, (D - 1) / 2) / mu**2)
    return slope * init_dist + L * M * _power(base, D) / mu


def aid_error_bound(constants: SmoothnessConstants, alpha: float, D: int, N: int,
                    y_dist_sq: float, v_dist_sq: float) -> float:
    """Bound on the squared AID estimation error given the squared distances
       of the inner and CG starting points from y* and v*.
    """
    bounds = compute_bounds(constants, alpha, 0.0, alpha, D, N, 1, 1, 1, 1, 1)
    gamma_term = bounds.Gamma * _power(1 - alpha * constants.mu, D) * y_dist_sq
    cg_term = (6 * constants.L**2 * constants.kappa *
               _power(cg_factor(constants.kappa), 2 * N) * v_dist_sq)
    return gamma_term + cg_term


def tracking_error_bound(constants: SmoothnessConstants, bounds: TheoryBounds, D: int, S: int,
                         y0_dist_sq: float, grad_sq_history: Sequence[float]) -> float:
    """Bound on E|y_k^D - y*(x_k)|^2 for stocBiO at k = len(grad_sq_history),
       given the squared hypergradient norms at iterations 0..k-1. Infinite
       when lam >= 1.
    """
    if bounds.lam >= 1.0:
        return math.inf
    L, mu = constants.L, constants.mu
    k = len(grad_sq_history)
    floor = constants.sigma**2 / (L * mu * S)
    start = _power((L - mu) / (L + mu), 2 * D) * y0_dist_sq + floor
    history = sum(bounds.omega * _power(bounds.lam, k - 1 - j) * g
                  for j, g in enumerate(grad_sq_history))
    return (_power(bounds.lam, k) * start + history +
            (bounds.omega * bounds.Delta_var + floor) / (1 - bounds.lam))


def recommended_itd_steps(constants: SmoothnessConstants, alpha: float, epsilon: float,
                          init_dist_sq: float) -> int:
    """Inner steps D that make the ITD-BiO error floor at most 2 epsilon / 3."""
    require(epsilon > 0.0, 'epsilon must be positive')
    L, mu, M, tau, rho = constants.L, constants.mu, constants.M, constants.tau, constants.rho
    base = 1 - alpha * mu
    if base <= 0.0:
        return 1
    scale = max(3 * L * M / mu, 9 * init_dist_sq * L**2 * (1 + L / mu)**2,
                36 * init_dist_sq * M**2 * (tau * mu + L * rho)**2 / (base * mu**4))
    steps = math.log(scale * 9 / (2 * epsilon)) / math.log(1 / base)
    return max(0, int(math.ceil(steps)))
