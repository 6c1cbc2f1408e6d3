"""Outer loops for AID-BiO, ITD-BiO and stocBiO.

   Each outer iteration warm starts the inner variable at the previous
   iteration's output (and, for AID-BiO, the CG variable at the previous
   CG output), forms a hypergradient estimate and takes the plain step
   x_{k+1} = x_k - beta * estimate.
"""

import dataclasses
import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from bilevel.dump_vec import dump_vec
from bilevel.errors import BilevelError, ErrorCode, require
from bilevel.hypergrad import (AID, ITD, STOCBIO, HypergradEstimate, aid_estimate, build_schedule,
                               itd_estimate, stocbio_estimate)
from bilevel.inner import gd_inner, guard_divergence, sgd_inner
from bilevel.log import log
from bilevel.problem import CostCounters, SmoothnessConstants
from bilevel.streams import Streams
from bilevel.trace import RunTrace, TraceRow

ALGORITHM_NAMES = {
    'aid': AID,
    'aid-bio': AID,
    'itd': ITD,
    'itd-bio': ITD,
    'stocbio': STOCBIO,
}

# fields each algorithm cannot run without
REQUIRED_FIELDS = {
    AID: ('N', ),
    ITD: (),
    STOCBIO: ('Q', 'B', 'S', 'Df', 'Dg'),
}


def parse_algorithm(name: str) -> str:
    """Maps a user supplied algorithm name (any case) to its tag."""
    tag = ALGORITHM_NAMES.get(str(name).strip().lower())
    if tag is None:
        raise BilevelError(ErrorCode.CONFIG, f'unknown algorithm {name!r}', key='algorithm')
    return tag


def _is_int(value) -> bool:
    return isinstance(value, (int, np.integer)) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return (_is_int(value) or isinstance(value, (float, np.floating))) and math.isfinite(value)


def resolve_point(value, p: int, default, key: str) -> np.ndarray:
    """Expands a config point: None gives default, a number fills all p
       coordinates, a list is taken as is.
    """
    if value is None:
        return np.array(default, dtype=np.float64)
    if _is_number(value):
        return np.full(p, float(value))
    require(isinstance(value, (list, tuple)) and all(_is_number(v) for v in value),
            f'{key} must be a number or a list of numbers', key=key)
    point = np.array(value, dtype=np.float64)
    require(point.shape == (p, ), f'{key} has length {len(point)}, problem expects {p}', key=key)
    return point


# pylint: disable=too-many-instance-attributes
@dataclass
class RunConfig:
    """Parameters of one optimizer run.

       alpha and beta default to the theory stepsizes, eta to 0.5/L. x0 is a
       scalar fill value or an explicit list (None starts at the family's
       initial point). stop_threshold ends the run early once the squared
       hypergradient norm drops to it.
    """

    algorithm: str
    label: str = 'run'
    K: int = 0
    D: int = 1
    N: Optional[int] = None
    Q: Optional[int] = None
    B: Optional[int] = None
    eta: Optional[float] = None
    S: Optional[int] = None
    Df: Optional[int] = None
    Dg: Optional[int] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    warm_start_y: bool = True
    warm_start_v: bool = True
    seed: int = 0
    oracle_every: int = 1
    x0: Optional[Union[float, List[float]]] = None
    stop_threshold: Optional[float] = None
    cg_tol: float = 0.0

    def __post_init__(self) -> None:
        self.algorithm = parse_algorithm(self.algorithm)
        self.validate()

    def validate(self) -> None:
        """Raises a CONFIG error naming the first offending field."""
        require(isinstance(self.label, str) and self.label != '',
                'label must be a non-empty string',
                key='label')
        for name in REQUIRED_FIELDS[self.algorithm]:
            require(getattr(self, name) is not None,
                    f'{self.algorithm} run {self.label!r} needs {name}', key=name)
        for name in ('K', 'D', 'N', 'seed'):
            value = getattr(self, name)
            if value is not None:
                require(_is_int(value) and value >= 0,
                        f'{name} must be a non-negative integer, got {value!r}', key=name)
        for name in ('Q', 'B', 'S', 'Df', 'Dg', 'oracle_every'):
            value = getattr(self, name)
            if value is not None:
                require(_is_int(value) and value >= 1,
                        f'{name} must be a positive integer, got {value!r}', key=name)
        for name in ('alpha', 'beta', 'eta'):
            value = getattr(self, name)
            if value is not None:
                require(_is_number(value) and value > 0.0,
                        f'{name} must be a positive number, got {value!r}', key=name)
        for name in ('stop_threshold', 'cg_tol'):
            value = getattr(self, name)
            if value is not None:
                require(_is_number(value) and value >= 0.0,
                        f'{name} must be a non-negative number, got {value!r}', key=name)
        for name in ('warm_start_y', 'warm_start_v'):
            require(isinstance(getattr(self, name), bool), f'{name} must be true or false',
                    key=name)
        if self.x0 is not None and not _is_number(self.x0):
            require(isinstance(self.x0, (list, tuple)) and all(_is_number(v) for v in self.x0),
                    'x0 must be a number or a list of numbers', key='x0')

    @classmethod
    def from_dict(cls, data: Dict) -> 'RunConfig':
        """Builds a RunConfig from a config block, rejecting unknown keys."""
        require(isinstance(data, dict), 'a run block must be a mapping', key='runs')
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            require(key in known, f'unknown run key {key!r}', key=key)
        require('algorithm' in data, 'a run block needs an algorithm', key='algorithm')
        return cls(**data)

    def to_dict(self) -> Dict:
        """Returns the config as a JSON friendly dict."""
        result = dataclasses.asdict(self)
        if isinstance(self.x0, tuple):
            result['x0'] = list(self.x0)
        return result

    def initial_x(self, p: int, default: np.ndarray) -> np.ndarray:
        """Returns x_0 for a problem with p upper variables."""
        return resolve_point(self.x0, p, default, key='x0')


@dataclass
class IterateState:
    """The state carried between outer iterations."""

    x: np.ndarray
    y_warm: np.ndarray
    v_warm: Optional[np.ndarray]
    counters: CostCounters
    k: int = 0


def default_stepsizes(constants: SmoothnessConstants, algorithm: str) -> Tuple[float, float]:
    """Returns (alpha, beta) from the convergence analysis:

         AID-BiO   (1/L, 1/(8 L_Phi))
         ITD-BiO   (1/L, 1/(4 L_Phi))
         stocBiO   (2/(L + mu), 1/(4 L_Phi))
    """
    require(constants.mu > 0.0, 'mu must be positive')
    tag = parse_algorithm(algorithm) if algorithm not in REQUIRED_FIELDS else algorithm
    l_phi = constants.l_phi
    if tag == AID:
        return 1.0 / constants.L, 1.0 / (8.0 * l_phi)
    if tag == ITD:
        return 1.0 / constants.L, 1.0 / (4.0 * l_phi)
    return 2.0 / (constants.L + constants.mu), 1.0 / (4.0 * l_phi)


def default_eta(constants: SmoothnessConstants) -> float:
    """Neumann step used when a run leaves eta unset. Half of 1/L keeps
       eta * mu below 1 even when mu == L.
    """
    return 0.5 / constants.L


class BilevelRunner:
    """Runs one RunConfig against one problem and records its trace."""

    SHOW_NONE = 0
    SHOW_ITERATIONS = 1 << 0
    SHOW_VECTORS = 1 << 1
    SHOW_DIAGNOSTICS = 1 << 2

    # pylint: disable=too-many-arguments
    def __init__(self, prob, config: RunConfig, rng=None, show: int = SHOW_NONE,
                 timing: bool = True) -> None:
        self.prob = prob
        self.config = config
        self.rng = Streams(config.seed, config.label) if rng is None else rng
        self.show = show
        self.timing = timing
        theory_alpha, theory_beta = default_stepsizes(prob.constants, config.algorithm)
        self.alpha = theory_alpha if config.alpha is None else float(config.alpha)
        self.beta = theory_beta if config.beta is None else float(config.beta)
        self.eta = default_eta(prob.constants) if config.eta is None else float(config.eta)
        log(f'{config.label}: {config.algorithm} theory stepsizes alpha={theory_alpha:.6g} '
            f'beta={theory_beta:.6g}, using alpha={self.alpha:.6g} beta={self.beta:.6g}')
        self.schedule = None
        if config.algorithm == STOCBIO:
            self.schedule = build_schedule(config.Q, config.B, self.eta, prob.constants.mu)

    def iteration_rng(self, k: int):
        """Substreams for iteration k (a plain Generator is shared)."""
        if isinstance(self.rng, Streams):
            return self.rng.at(k)
        return self.rng

    def oracle_due(self, k: int) -> bool:
        """True when the oracle columns are filled in for row k."""
        if not self.prob.has_oracle:
            return False
        if self.config.stop_threshold is not None:
            return True
        return k % self.config.oracle_every == 0 or k == self.config.K

    def step(self, state: IterateState) -> Tuple[HypergradEstimate, np.ndarray]:
        """Runs the inner solver and the estimator at state.x. Returns the
           estimate and the inner output y^D.
        """
        cfg = self.config
        prob = self.prob
        if cfg.algorithm == STOCBIO:
            rng = self.iteration_rng(state.k)
            y_out = sgd_inner(prob, state.x, state.y_warm, self.alpha, cfg.D, cfg.S, rng,
                              state.counters)
            est = stocbio_estimate(prob, state.x, y_out, self.schedule, cfg.Df, cfg.Dg, rng,
                                   state.counters)
            return est, y_out
        traj = gd_inner(prob, state.x, state.y_warm, self.alpha, cfg.D, state.counters)
        if cfg.algorithm == AID:
            est = aid_estimate(prob, state.x, traj.final, state.v_warm, cfg.N, state.counters,
                               tol=cfg.cg_tol)
            return est, traj.final
        return itd_estimate(prob, traj, state.counters, x=state.x), traj.final

    def upper_loss(self, x, y) -> float:
        """Phi(x) for families with an oracle, f(x, y) otherwise."""
        if self.prob.has_oracle:
            return self.prob.upper_value(x, self.prob.lower_solution(x))
        return self.prob.upper_value(x, y)

    # pylint: disable=too-many-locals
    def run(self) -> RunTrace:
        """Executes the run. On failure the partial trace is attached to the
           raised BilevelError as `trace`.
        """
        cfg = self.config
        prob = self.prob
        trace = RunTrace(cfg.label, cfg.algorithm, self.alpha, self.beta)
        y_init = np.zeros(prob.q)
        state = IterateState(x=cfg.initial_x(prob.p, prob.initial_point()),
                             y_warm=y_init.copy(),
                             v_warm=np.zeros(prob.q) if cfg.algorithm == AID else None,
                             counters=CostCounters())
        x0_norm = float(np.linalg.norm(state.x))
        last_est = None
        start = time.monotonic()
        try:
            for k in range(cfg.K + 1):
                state.k = k
                tick = time.monotonic()
                oracle_sq = None
                if self.oracle_due(k):
                    oracle_sq = float(np.sum(prob.hypergradient(state.x)**2))
                if k == cfg.K or self.should_stop(oracle_sq, last_est):
                    trace.stopped_early = k < cfg.K
                    trace.y_final = state.y_warm.copy()
                    counters = state.counters
                    trace.append(
                        TraceRow(k, None, oracle_sq, None, '', counters.gc_f, counters.gc_g,
                                 counters.jv_g, counters.hv_g, self.elapsed_ms(tick),
                                 self.upper_loss(state.x, state.y_warm)), state.x)
                    break
                est, y_out = self.step(state)
                last_est = float(np.sum(est.grad**2))
                tracking = None
                if oracle_sq is not None:
                    tracking = float(np.linalg.norm(y_out - prob.lower_solution(state.x)))
                counters = state.counters
                trace.append(
                    TraceRow(k, last_est, oracle_sq, tracking, est.describe(), counters.gc_f,
                             counters.gc_g, counters.jv_g, counters.hv_g, self.elapsed_ms(tick),
                             self.upper_loss(state.x, y_out)), state.x)
                self.report(k, est, oracle_sq, state)
                state.y_warm = y_out if cfg.warm_start_y else y_init.copy()
                if cfg.algorithm == AID:
                    state.v_warm = est.v_out if cfg.warm_start_v else np.zeros(prob.q)
                state.x = state.x - self.beta * est.grad
                guard_divergence(state.x, x0_norm, k + 1, 'outer iteration')
        except BilevelError as ex:
            log(f'{cfg.label}: aborted at k={state.k}: {ex}')
            ex.trace = trace
            raise
        finally:
            trace.wall_ms_total = self.elapsed_ms(start) or 0.0
        return trace

    def should_stop(self, oracle_sq: Optional[float], last_est: Optional[float]) -> bool:
        """True once the stop threshold is met (oracle norm when available,
           otherwise the previous estimate).
        """
        threshold = self.config.stop_threshold
        if threshold is None:
            return False
        measure = oracle_sq if oracle_sq is not None else last_est
        return measure is not None and measure <= threshold

    def elapsed_ms(self, since: float) -> Optional[float]:
        """Milliseconds since `since`, or None when timing is off."""
        if not self.timing:
            return None
        return (time.monotonic() - since) * 1000.0

    def report(self, k: int, est: HypergradEstimate, oracle_sq: Optional[float],
               state: IterateState) -> None:
        """Logs iteration k according to the show flags."""
        if self.show & BilevelRunner.SHOW_ITERATIONS:
            line = f'{self.config.label} k={k:5d} est={float(np.sum(est.grad**2)):.6e}'
            if oracle_sq is not None:
                line += f' oracle={oracle_sq:.6e}'
            log(line)
        if self.show & BilevelRunner.SHOW_DIAGNOSTICS:
            log(f'  {est.describe()} counters={state.counters.as_tuple()}')
        if self.show & BilevelRunner.SHOW_VECTORS:
            dump_vec(state.x, prefix='  x', log=log)
            dump_vec(est.grad, prefix='  g', log=log)


def run(prob, config: RunConfig, rng=None, show: int = BilevelRunner.SHOW_NONE,
        timing: bool = True) -> RunTrace:
    """Runs config.algorithm on prob."""
    return BilevelRunner(prob, config, rng, show, timing).run()


def run_aid_bio(prob, config: RunConfig, rng=None, show: int = BilevelRunner.SHOW_NONE,
                timing: bool = True) -> RunTrace:
    """AID-BiO: gradient descent inner loop, CG based implicit differentiation."""
    return run(prob, dataclasses.replace(config, algorithm=AID), rng, show, timing)


def run_itd_bio(prob, config: RunConfig, rng=None, show: int = BilevelRunner.SHOW_NONE,
                timing: bool = True) -> RunTrace:
    """ITD-BiO: gradient descent inner loop, backpropagation through it."""
    return run(prob, dataclasses.replace(config, algorithm=ITD), rng, show, timing)


def run_stocbio(prob, config: RunConfig, rng=None, show: int = BilevelRunner.SHOW_NONE,
                timing: bool = True) -> RunTrace:
    """stocBiO: SGD inner loop, sampled Neumann series estimate."""
    return run(prob, dataclasses.replace(config, algorithm=STOCBIO), rng, show, timing)
