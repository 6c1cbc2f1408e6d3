"""Quadratic bilevel test problems with closed-form oracles.

   g(x, y) = 1/2 y'Ay - y'(Bx + c)        (A SPD, so y*(x) = A^-1(Bx + c))
   f(x, y) = phi(x) + w/2 |y - d|^2

   which gives grad Phi(x) = grad phi(x) + w B'A^-1(y*(x) - d).

   The stochastic view is a finite sum over `n_samples` per-sample problems
   whose perturbations of c (and optionally of d and A) are centered, so the
   deterministic functions are exactly the population means.
"""

import math
from typing import Dict, Optional

import numpy as np
import scipy.linalg

from bilevel.errors import BilevelError, ErrorCode, require
from bilevel.problem import (Batch, BilevelProblem, SmoothnessConstants,
                             check_finite)

PHI_COSINE = 'cosine'
PHI_LINEAR = 'linear'
PHI_ZERO = 'zero'

# weight of the |x|^2 term which keeps the cosine field bounded below
COSINE_RIDGE = 0.05


def _as_array(value) -> Optional[np.ndarray]:
    if value is None:
        return None
    return np.array(value, dtype=np.float64)


def _batch_mean(noise: Optional[np.ndarray], batch: Optional[Batch]):
    """Mean perturbation over the batch (None when there is nothing to add)."""
    if noise is None or batch is None:
        return None
    return noise[batch.indices].mean(axis=0)


# pylint: disable=too-many-instance-attributes
class QuadraticBilevel(BilevelProblem):
    """A quadratic lower level coupled to a smooth nonconvex upper level."""

    family = 'quadratic'
    has_oracle = True

    # pylint: disable=too-many-arguments
    def __init__(self,
                 A,
                 Bmat,
                 c,
                 d,
                 phi: str = PHI_COSINE,
                 phi_coef=None,
                 upper_y_weight: float = 1.0,
                 c_noise=None,
                 d_noise=None,
                 a_noise=None,
                 n_samples: int = 1,
                 constants: Optional[SmoothnessConstants] = None) -> None:
        self.A = _as_array(A)
        self.Bmat = _as_array(Bmat)
        self.c = _as_array(c)
        self.d = _as_array(d)
        q, p = self.Bmat.shape
        require(self.A.shape == (q, q), f'A must be {q}x{q}')
        require(self.c.shape == (q, ) and self.d.shape == (q, ),
                f'c and d must have length {q}')
        require(phi in (PHI_COSINE, PHI_LINEAR, PHI_ZERO),
                f'unknown upper term {phi!r}')
        self.phi = phi
        self.phi_coef = _as_array(phi_coef) if phi == PHI_LINEAR else None
        if phi == PHI_LINEAR:
            require(self.phi_coef is not None and self.phi_coef.shape == (p, ),
                    f'linear upper term needs a coefficient vector of length {p}')
        self.upper_y_weight = float(upper_y_weight)
        self.c_noise = _as_array(c_noise)
        self.d_noise = _as_array(d_noise)
        self.a_noise = _as_array(a_noise)
        self.n_samples = int(n_samples)
        for name, noise in (('c_noise', self.c_noise), ('d_noise', self.d_noise),
                            ('a_noise', self.a_noise)):
            if noise is not None:
                require(noise.shape[0] == self.n_samples,
                        f'{name} must have {self.n_samples} rows')
        try:
            self.chol = scipy.linalg.cho_factor(self.A)
        except np.linalg.LinAlgError as ex:
            raise BilevelError(ErrorCode.INVALID_PARAM, 'A must be SPD') from ex
        if constants is None:
            constants = self.exact_constants()
        super().__init__(p, q, constants)

    def exact_constants(self) -> SmoothnessConstants:
        """mu, L from the spectrum of A; tau = rho = 0 since the second
           derivatives of g are constant. M and (with A noise) sigma are
           estimates.
        """
        eigs = scipy.linalg.eigvalsh(self.A)
        mu, L = float(eigs[0]), float(eigs[-1])
        p = self.Bmat.shape[1]
        w = abs(self.upper_y_weight)
        # |grad_y f| over lower solutions for x in the box |x_i| <= pi
        reach = (np.linalg.norm(self.c) +
                 np.linalg.norm(self.Bmat, 2) * math.pi * math.sqrt(p)) / mu
        M = w * (np.linalg.norm(self.d) + reach)
        if self.phi == PHI_COSINE:
            M += math.sqrt(p) * (1.0 + 2 * COSINE_RIDGE * math.pi)
        elif self.phi == PHI_LINEAR:
            M += np.linalg.norm(self.phi_coef)
        estimated = ['M']
        sigma = 0.0
        if self.c_noise is not None:
            sigma = math.sqrt(np.mean(np.sum(self.c_noise**2, axis=1)))
        if self.a_noise is not None:
            spread = max(np.linalg.norm(e, 2) for e in self.a_noise)
            sigma += spread * reach
            estimated.append('sigma')
        return SmoothnessConstants(M=float(M),
                                   L=L,
                                   mu=mu,
                                   tau=0.0,
                                   rho=0.0,
                                   sigma=float(sigma),
                                   estimated=tuple(estimated))

    def population_size(self, level: str = 'lower') -> int:
        return self.n_samples

    # Upper term phi

    def phi_value(self, x) -> float:
        """phi(x)"""
        if self.phi == PHI_COSINE:
            return float(np.sum(np.cos(x)) + COSINE_RIDGE * np.dot(x, x))
        if self.phi == PHI_LINEAR:
            return float(np.dot(self.phi_coef, x))
        return 0.0

    def phi_grad(self, x) -> np.ndarray:
        """grad phi(x)"""
        x = np.asarray(x, dtype=np.float64)
        if self.phi == PHI_COSINE:
            return -np.sin(x) + 2 * COSINE_RIDGE * x
        if self.phi == PHI_LINEAR:
            return self.phi_coef.copy()
        return np.zeros_like(x)

    # Evaluation handles

    def upper_value(self, x, y, batch: Optional[Batch] = None) -> float:
        resid = np.asarray(y) - self.d
        if self.d_noise is not None and batch is not None:
            resid = resid[None, :] - self.d_noise[batch.indices]
            sq = float(np.mean(np.sum(resid**2, axis=1)))
        else:
            sq = float(np.dot(resid, resid))
            if self.d_noise is not None:
                sq += float(np.mean(np.sum(self.d_noise**2, axis=1)))
        return self.phi_value(x) + 0.5 * self.upper_y_weight * sq

    def lower_value(self, x, y, batch: Optional[Batch] = None) -> float:
        y = np.asarray(y)
        Ay = self.lower_hvp(x, y, y, batch)
        lin = self.Bmat @ x + self.c
        shift = _batch_mean(self.c_noise, batch)
        if shift is not None:
            lin = lin + shift
        return float(0.5 * np.dot(y, Ay) - np.dot(y, lin))

    def upper_grad_x(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        return self.phi_grad(x)

    def upper_grad_y(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        resid = np.asarray(y) - self.d
        shift = _batch_mean(self.d_noise, batch)
        if shift is not None:
            resid = resid - shift
        return self.upper_y_weight * resid

    def lower_grad_y(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        grad = self.lower_hvp(x, y, y, batch) - self.Bmat @ x - self.c
        shift = _batch_mean(self.c_noise, batch)
        if shift is not None:
            grad = grad - shift
        return grad

    def lower_jvp(self, x, y, v, batch: Optional[Batch] = None) -> np.ndarray:
        return -self.Bmat.T @ v

    def lower_hvp(self, x, y, v, batch: Optional[Batch] = None) -> np.ndarray:
        result = self.A @ v
        shift = _batch_mean(self.a_noise, batch)
        if shift is not None:
            result = result + shift @ v
        return result

    # Oracles

    def lower_solution(self, x) -> np.ndarray:
        return oracle_lower_solution(self, x)

    def hypergradient(self, x) -> np.ndarray:
        return oracle_hypergradient(self, x)

    def to_dict(self) -> Dict:
        def rows(arr):
            return None if arr is None else arr.tolist()

        return {
            'family': self.family,
            'p': self.p,
            'q': self.q,
            'A': rows(self.A),
            'Bmat': rows(self.Bmat),
            'c': rows(self.c),
            'd': rows(self.d),
            'phi': self.phi,
            'phi_coef': rows(self.phi_coef),
            'upper_y_weight': self.upper_y_weight,
            'n_samples': self.n_samples,
            'c_noise': rows(self.c_noise),
            'd_noise': rows(self.d_noise),
            'a_noise': rows(self.a_noise),
            'constants': self.constants.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'QuadraticBilevel':
        """Rebuilds an instance from to_dict output."""
        return cls(data['A'],
                   data['Bmat'],
                   data['c'],
                   data['d'],
                   phi=data.get('phi', PHI_COSINE),
                   phi_coef=data.get('phi_coef'),
                   upper_y_weight=data.get('upper_y_weight', 1.0),
                   c_noise=data.get('c_noise'),
                   d_noise=data.get('d_noise'),
                   a_noise=data.get('a_noise'),
                   n_samples=data.get('n_samples', 1),
                   constants=SmoothnessConstants.from_dict(data['constants']))


def random_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar distributed orthogonal matrix (QR of a Gaussian, signs fixed)."""
    gauss = rng.standard_normal((dim, dim))
    q_mat, r_mat = np.linalg.qr(gauss)
    signs = np.sign(np.diag(r_mat))
    signs[signs == 0] = 1.0
    return q_mat * signs


def spd_with_spectrum(eigs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Returns Q diag(eigs) Q' for a random orthogonal Q."""
    if np.all(eigs == eigs[0]):
        return eigs[0] * np.eye(len(eigs))
    q_mat = random_orthogonal(len(eigs), rng)
    mat = (q_mat * eigs) @ q_mat.T
    return 0.5 * (mat + mat.T)


def centered(noise: np.ndarray) -> np.ndarray:
    """Removes the population mean so the finite sum averages to zero."""
    return noise - noise.mean(axis=0, keepdims=True)


# pylint: disable=too-many-arguments,too-many-locals
def make_quadratic(p_dim: int,
                   q_dim: int,
                   kappa_target: float,
                   noise_sigma: float,
                   seed: int,
                   n_samples: int = 256,
                   coupling: float = 1.0,
                   phi: str = PHI_COSINE,
                   upper_y_weight: float = 1.0,
                   target_noise: float = 0.0,
                   hessian_noise: float = 0.0) -> QuadraticBilevel:
    """Builds a quadratic instance whose A has spectrum spread evenly over
       [1, kappa_target] in a random orthogonal basis, so mu = 1 and
       L = kappa_target exactly.

       coupling is the spectral norm of Bmat (0 decouples the levels).
       noise_sigma perturbs c per sample; target_noise perturbs d; a
       hessian_noise h in [0, 1) adds symmetric per-sample perturbations of
       A with spectral norm at most h (keeping every sample SPD).
    """
    for name, value in (('p_dim', p_dim), ('q_dim', q_dim), ('n_samples', n_samples)):
        require(int(value) == value and value >= 1, f'{name} must be a positive integer')
    for name, value in (('kappa_target', kappa_target), ('noise_sigma', noise_sigma),
                        ('coupling', coupling), ('target_noise', target_noise),
                        ('hessian_noise', hessian_noise)):
        require(math.isfinite(value), f'{name} must be finite')
    require(kappa_target >= 1.0, f'kappa_target must be >= 1, got {kappa_target}')
    require(noise_sigma >= 0.0 and target_noise >= 0.0, 'noise levels must be >= 0')
    require(0.0 <= hessian_noise < 1.0, 'hessian_noise must lie in [0, 1)')
    require(q_dim >= 2 or kappa_target == 1.0,
            'a one dimensional lower level cannot have kappa > 1')
    rng = np.random.default_rng(seed)

    eigs = np.linspace(1.0, kappa_target, q_dim)
    A = spd_with_spectrum(eigs, rng)
    gauss = rng.standard_normal((q_dim, p_dim))
    Bmat = coupling * gauss / np.linalg.norm(gauss, 2)
    c = rng.standard_normal(q_dim)
    d = rng.standard_normal(q_dim)
    phi_coef = rng.standard_normal(p_dim) if phi == PHI_LINEAR else None

    c_noise = d_noise = a_noise = None
    if noise_sigma > 0.0:
        c_noise = noise_sigma * centered(rng.standard_normal((n_samples, q_dim)))
    if target_noise > 0.0:
        d_noise = target_noise * centered(rng.standard_normal((n_samples, q_dim)))
    if hessian_noise > 0.0:
        raw = rng.standard_normal((n_samples, q_dim, q_dim))
        raw = centered(0.5 * (raw + raw.transpose(0, 2, 1)))
        largest = max(np.linalg.norm(e, 2) for e in raw)
        if largest > 0.0:
            a_noise = raw * (hessian_noise / largest)
    prob = QuadraticBilevel(A,
                            Bmat,
                            c,
                            d,
                            phi=phi,
                            phi_coef=phi_coef,
                            upper_y_weight=upper_y_weight,
                            c_noise=c_noise,
                            d_noise=d_noise,
                            a_noise=a_noise,
                            n_samples=n_samples)
    exact = prob.constants
    # the spectrum is known by construction, so report it without round-off
    prob.constants = SmoothnessConstants(M=exact.M,
                                         L=float(kappa_target),
                                         mu=1.0,
                                         sigma=exact.sigma,
                                         estimated=exact.estimated)
    return prob


def oracle_lower_solution(prob: QuadraticBilevel, x) -> np.ndarray:
    """y*(x) = A^-1 (Bx + c) via the Cholesky factor of A."""
    x = np.asarray(x, dtype=np.float64)
    check_finite('x', x)
    try:
        return scipy.linalg.cho_solve(prob.chol, prob.Bmat @ x + prob.c)
    except (np.linalg.LinAlgError, ValueError) as ex:
        raise BilevelError(ErrorCode.INTERNAL, f'lower solve failed: {ex}') from ex


def oracle_hypergradient(prob: QuadraticBilevel, x) -> np.ndarray:
    """grad Phi(x) = grad phi(x) + w B'A^-1 (y*(x) - d)."""
    x = np.asarray(x, dtype=np.float64)
    y_star = oracle_lower_solution(prob, x)
    v_star = scipy.linalg.cho_solve(prob.chol,
                                    prob.upper_y_weight * (y_star - prob.d))
    return prob.phi_grad(x) + prob.Bmat.T @ v_star
