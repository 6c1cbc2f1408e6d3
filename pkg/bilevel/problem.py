"""Defines the bilevel problem interface along with the records every
   solver shares: the smoothness constants, the cost counters and the
   sample batch.

   A problem is min_x Phi(x) = f(x, y*(x)) with y*(x) = argmin_y g(x, y).
   Families supply f, g, their first derivatives and the two second order
   products the toolkit needs (JVP and HVP), both deterministically and
   averaged over a Batch of samples.
"""

import math
from dataclasses import dataclass, field, fields
from typing import Dict, Optional, Tuple

import numpy as np

from bilevel.errors import BilevelError, ErrorCode, require

LOWER = 'lower'
UPPER = 'upper'


@dataclass(frozen=True)
class SmoothnessConstants:
    """The constants (M, L, mu, tau, rho, sigma) the analysis assumes known.

       `estimated` lists the fields that are upper estimates rather than
       exact values for the instance.
    """

    M: float
    L: float
    mu: float
    tau: float = 0.0
    rho: float = 0.0
    sigma: float = 0.0
    estimated: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name in ('M', 'L', 'mu', 'tau', 'rho', 'sigma'):
            value = getattr(self, name)
            require(math.isfinite(value) and value >= 0.0,
                    f'constant {name} must be finite and non-negative, got {value}')
        require(self.mu > 0.0, f'mu must be positive, got {self.mu}')
        require(self.L >= self.mu * (1.0 - 1e-12),
                f'L ({self.L}) must be at least mu ({self.mu})')

    @property
    def kappa(self) -> float:
        """Condition number L/mu (never below 1)."""
        return max(1.0, self.L / self.mu)

    @property
    def l_phi(self) -> float:
        """Smoothness constant of the hyperobjective Phi."""
        L, mu, M = self.L, self.mu, self.M
        return (L + (2 * L**2 + self.tau * M**2) / mu +
                (self.rho * L * M + L**3 + self.tau * M * L) / mu**2 +
                self.rho * L**2 * M / mu**3)

    def to_dict(self) -> Dict:
        """Returns a JSON friendly dict."""
        result = {f.name: float(getattr(self, f.name))
                  for f in fields(self) if f.name != 'estimated'}
        result['estimated'] = list(self.estimated)
        return result

    @classmethod
    def from_dict(cls, data: Dict) -> 'SmoothnessConstants':
        """Inverse of to_dict."""
        return cls(M=float(data['M']),
                   L=float(data['L']),
                   mu=float(data['mu']),
                   tau=float(data.get('tau', 0.0)),
                   rho=float(data.get('rho', 0.0)),
                   sigma=float(data.get('sigma', 0.0)),
                   estimated=tuple(data.get('estimated', ())))


@dataclass
class CostCounters:
    """Oracle call counts for a run.

       Deterministic calls count 1, batched calls count the batch size.
    """

    gc_f: int = 0
    gc_g: int = 0
    jv_g: int = 0
    hv_g: int = 0

    def as_tuple(self) -> Tuple[int, int, int, int]:
        """Returns (gc_f, gc_g, jv_g, hv_g)."""
        return (self.gc_f, self.gc_g, self.jv_g, self.hv_g)

    def copy(self) -> 'CostCounters':
        """Returns a snapshot of the counters."""
        return CostCounters(*self.as_tuple())

    def add(self, other: 'CostCounters') -> None:
        """Accumulates other into these counters."""
        self.gc_f += other.gc_f
        self.gc_g += other.gc_g
        self.jv_g += other.jv_g
        self.hv_g += other.hv_g

    def since(self, start: 'CostCounters') -> 'CostCounters':
        """Returns the counts accumulated after the snapshot `start`."""
        return CostCounters(self.gc_f - start.gc_f, self.gc_g - start.gc_g,
                            self.jv_g - start.jv_g, self.hv_g - start.hv_g)


@dataclass(frozen=True, eq=False)
class Batch:
    """A multiset of sample indices drawn from one level's population."""

    indices: np.ndarray = field(repr=False)
    level: str = LOWER

    def __post_init__(self) -> None:
        require(len(self.indices) >= 1, 'a batch needs at least one sample')

    @property
    def size(self) -> int:
        """Number of samples (with repetition)."""
        return len(self.indices)


class BilevelProblem:
    """Base class for the problem families.

       Derived classes set `family`, `p`, `q` and `constants`, and override
       the evaluation methods. Each evaluation takes an optional Batch: None
       evaluates the deterministic function, a Batch averages the per-sample
       functions over its indices.
    """

    family = 'abstract'
    has_oracle = False

    def __init__(self, p: int, q: int, constants: SmoothnessConstants) -> None:
        require(p >= 1 and q >= 1, f'dimensions must be positive, got p={p} q={q}')
        self.p = p
        self.q = q
        self.constants = constants

    def population_size(self, level: str = LOWER) -> int:
        """Size of the finite-sum population for the given level."""
        raise NotImplementedError

    def initial_point(self) -> np.ndarray:
        """Default starting point for the upper variable."""
        return np.zeros(self.p)

    def upper_value(self, x, y, batch: Optional[Batch] = None) -> float:
        """f(x, y)"""
        raise NotImplementedError

    def lower_value(self, x, y, batch: Optional[Batch] = None) -> float:
        """g(x, y)"""
        raise NotImplementedError

    def upper_grad_x(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        """Partial gradient of f with respect to x."""
        raise NotImplementedError

    def upper_grad_y(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        """Partial gradient of f with respect to y."""
        raise NotImplementedError

    def lower_grad_y(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        """Partial gradient of g with respect to y."""
        raise NotImplementedError

    def lower_jvp(self, x, y, v, batch: Optional[Batch] = None) -> np.ndarray:
        """Mixed second derivative of g applied to v (in R^q, result in R^p)."""
        raise NotImplementedError

    def lower_hvp(self, x, y, v, batch: Optional[Batch] = None) -> np.ndarray:
        """Hessian of g in y applied to v."""
        raise NotImplementedError

    def lower_solution(self, x) -> np.ndarray:
        """Exact y*(x), for families which have one."""
        raise BilevelError(ErrorCode.NO_ORACLE,
                           f'{self.family} has no closed-form lower solution')

    def hypergradient(self, x) -> np.ndarray:
        """Exact grad Phi(x), for families which have one."""
        raise BilevelError(ErrorCode.NO_ORACLE,
                           f'{self.family} has no closed-form hypergradient')

    def to_dict(self) -> Dict:
        """JSON snapshot of the instance (see bilevel.serialize)."""
        raise NotImplementedError


class CountedProblem:
    """Wraps a problem so that every oracle call is charged to `counters`.

       gc_f counts f gradients (x and y partials separately), gc_g counts g
       gradients, jv_g JVPs and hv_g HVPs.
    """

    def __init__(self, prob: BilevelProblem, counters: CostCounters) -> None:
        self.prob = prob
        self.counters = counters

    def __getattr__(self, name):
        return getattr(self.prob, name)

    @staticmethod
    def cost(batch: Optional[Batch]) -> int:
        """A deterministic call costs 1, a batched call its batch size."""
        return 1 if batch is None else batch.size

    def upper_grad_x(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        """Counted upper_grad_x."""
        self.counters.gc_f += self.cost(batch)
        return self.prob.upper_grad_x(x, y, batch)

    def upper_grad_y(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        """Counted upper_grad_y."""
        self.counters.gc_f += self.cost(batch)
        return self.prob.upper_grad_y(x, y, batch)

    def lower_grad_y(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        """Counted lower_grad_y."""
        self.counters.gc_g += self.cost(batch)
        return self.prob.lower_grad_y(x, y, batch)

    def lower_jvp(self, x, y, v, batch: Optional[Batch] = None) -> np.ndarray:
        """Counted lower_jvp."""
        self.counters.jv_g += self.cost(batch)
        return self.prob.lower_jvp(x, y, v, batch)

    def lower_hvp(self, x, y, v, batch: Optional[Batch] = None) -> np.ndarray:
        """Counted lower_hvp."""
        self.counters.hv_g += self.cost(batch)
        return self.prob.lower_hvp(x, y, v, batch)


def counted(prob, counters: Optional[CostCounters]):
    """Returns prob wrapped for counting (or unwrapped if counters is None)."""
    if counters is None:
        return prob
    if isinstance(prob, CountedProblem):
        prob = prob.prob
    return CountedProblem(prob, counters)


def sample_batch(prob: BilevelProblem,
                 size: int,
                 rng: np.random.Generator,
                 level: str = LOWER) -> Batch:
    """Draws `size` indices uniformly with replacement from the population
       of the given level. Consumes exactly one `integers` call of rng.
    """
    require(size >= 1, f'batch size must be at least 1, got {size}')
    if isinstance(prob, CountedProblem):
        prob = prob.prob
    population = prob.population_size(level)
    return Batch(rng.integers(0, population, size=size), level)


def full_batch(prob: BilevelProblem, level: str = LOWER) -> Batch:
    """Returns the whole population of a level as one batch."""
    if isinstance(prob, CountedProblem):
        prob = prob.prob
    return Batch(np.arange(prob.population_size(level)), level)


def check_finite(name: str, *arrays) -> None:
    """Raises INVALID_PARAM if any array holds NaN or inf."""
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise BilevelError(ErrorCode.INVALID_PARAM, f'{name} must be finite')
