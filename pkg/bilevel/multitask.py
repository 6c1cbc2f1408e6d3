"""Multitask quadratic family: m quadratic tasks sharing the upper variable.

   Each task keeps its own lower variable, stacked into y = (y_1, ..., y_m),
   with g(x, y) = sum_i g_i(x, y_i) and f(x, y) = (1/m) sum_i f_i(x, y_i).
   Upper level samples are tasks, so a Df batch is a task batch and the
   upper gradient over a batch is the task-sampled estimate.
"""

from typing import Dict, List, Optional

import numpy as np

from bilevel.errors import require
from bilevel.problem import LOWER, Batch, BilevelProblem, SmoothnessConstants
from bilevel.quadratic import QuadraticBilevel, make_quadratic


class MultitaskQuadratic(BilevelProblem):
    """m QuadraticBilevel tasks with a shared upper variable."""

    family = 'multitask'
    has_oracle = True

    def __init__(self,
                 tasks: List[QuadraticBilevel],
                 constants: Optional[SmoothnessConstants] = None) -> None:
        require(len(tasks) >= 1, 'need at least one task')
        p, q = tasks[0].p, tasks[0].q
        for task in tasks:
            require(task.p == p and task.q == q,
                    'all tasks must share the same dimensions')
        self.tasks = tasks
        self.m = len(tasks)
        self.task_q = q
        if constants is None:
            constants = SmoothnessConstants(
                M=max(t.constants.M for t in tasks),
                L=max(t.constants.L for t in tasks),
                mu=min(t.constants.mu for t in tasks),
                estimated=('M', ))
        super().__init__(p, q * self.m, constants)

    def population_size(self, level: str = LOWER) -> int:
        # lower level is deterministic, upper samples are tasks
        return 1 if level == LOWER else self.m

    def blocks(self, y) -> np.ndarray:
        """Views y as an (m, q) array of per-task lower variables."""
        return np.asarray(y, dtype=np.float64).reshape(self.m, self.task_q)

    def task_weights(self, batch: Optional[Batch]) -> np.ndarray:
        """Weight of each task in the upper mean (1/m each without a batch)."""
        if batch is None:
            return np.full(self.m, 1.0 / self.m)
        counts = np.bincount(batch.indices, minlength=self.m)
        return counts / float(batch.size)

    def upper_value(self, x, y, batch: Optional[Batch] = None) -> float:
        weights = self.task_weights(batch)
        ys = self.blocks(y)
        return float(
            sum(wgt * task.upper_value(x, ys[i])
                for i, (wgt, task) in enumerate(zip(weights, self.tasks)) if wgt))

    def lower_value(self, x, y, batch: Optional[Batch] = None) -> float:
        ys = self.blocks(y)
        return float(sum(task.lower_value(x, ys[i]) for i, task in enumerate(self.tasks)))

    def upper_grad_x(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        weights = self.task_weights(batch)
        grad = np.zeros(self.p)
        for wgt, task in zip(weights, self.tasks):
            if wgt:
                grad += wgt * task.phi_grad(x)
        return grad

    def upper_grad_y(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        weights = self.task_weights(batch)
        ys = self.blocks(y)
        out = np.zeros_like(ys)
        for i, (wgt, task) in enumerate(zip(weights, self.tasks)):
            if wgt:
                out[i] = wgt * task.upper_grad_y(x, ys[i])
        return out.ravel()

    def lower_grad_y(self, x, y, batch: Optional[Batch] = None) -> np.ndarray:
        ys = self.blocks(y)
        return np.concatenate(
            [task.lower_grad_y(x, ys[i]) for i, task in enumerate(self.tasks)])

    def lower_jvp(self, x, y, v, batch: Optional[Batch] = None) -> np.ndarray:
        vs = self.blocks(v)
        return sum(task.lower_jvp(x, None, vs[i]) for i, task in enumerate(self.tasks))

    def lower_hvp(self, x, y, v, batch: Optional[Batch] = None) -> np.ndarray:
        vs = self.blocks(v)
        return np.concatenate(
            [task.lower_hvp(x, None, vs[i]) for i, task in enumerate(self.tasks)])

    def lower_solution(self, x) -> np.ndarray:
        return np.concatenate([task.lower_solution(x) for task in self.tasks])

    def hypergradient(self, x) -> np.ndarray:
        return np.mean([task.hypergradient(x) for task in self.tasks], axis=0)

    def task_hypergradient(self, x, batch: Batch) -> np.ndarray:
        """Mean of the exact per-task hypergradients over a task batch."""
        grads = np.array([task.hypergradient(x) for task in self.tasks])
        return grads[batch.indices].mean(axis=0)

    def to_dict(self) -> Dict:
        return {
            'family': self.family,
            'p': self.p,
            'q': self.q,
            'm': self.m,
            'tasks': [task.to_dict() for task in self.tasks],
            'constants': self.constants.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'MultitaskQuadratic':
        """Rebuilds an instance from to_dict output."""
        return cls([QuadraticBilevel.from_dict(t) for t in data['tasks']],
                   constants=SmoothnessConstants.from_dict(data['constants']))


# pylint: disable=too-many-arguments
def make_multitask(m: int,
                   p_dim: int,
                   q_dim: int,
                   kappa_target: float,
                   seed: int,
                   coupling: float = 1.0) -> MultitaskQuadratic:
    """Builds m independent noiseless quadratic tasks sharing x."""
    require(int(m) == m and m >= 1, 'm must be a positive integer')
    seeds = np.random.SeedSequence(seed).generate_state(m)
    tasks = [
        make_quadratic(p_dim,
                       q_dim,
                       kappa_target,
                       0.0,
                       int(task_seed),
                       n_samples=1,
                       coupling=coupling) for task_seed in seeds
    ]
    return MultitaskQuadratic(tasks)
