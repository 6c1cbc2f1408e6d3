"""Experiment configuration files.

   A config is a JSON document (or YAML, chosen by the .yaml/.yml suffix):

     {
       "problem":   {"family": "quadratic", "seed": 0, "params": {...}},
       "runs":      [{"label": "aid", "algorithm": "AID", "K": 100, ...}, ...],
       "output_dir": "out",
       "timing":    true,
       "report":    {"bounds": true, "gradcheck": true},
       "gradcheck": {"x": 0.5, "h": 1e-5,
                     "checks": [{"method": "AID", "D": 200, "N": 50, "threshold": 1e-6}]},
       "acceptance": {"only": [1, 10]}
     }

   family is one of quadratic, multitask, hyperclean, logreg or snapshot (params
   {"path": ...} naming a problem written by save_problem). Every problem
   error is reported with the key it came from.
"""

import inspect
import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import yaml

from bilevel.errors import BilevelError, ErrorCode, require
from bilevel.hyperclean import make_hyperclean
from bilevel.hypergrad import AID, ITD
from bilevel.logreg import make_logreg
from bilevel.multitask import make_multitask
from bilevel.optimizers import RunConfig, parse_algorithm
from bilevel.problem import BilevelProblem
from bilevel.quadratic import make_quadratic
from bilevel.serialize import read_problem


def _read_snapshot(path: str, seed: int = 0) -> BilevelProblem:
    # pylint: disable=unused-argument
    return read_problem(path)


BUILDERS: Dict[str, Callable[..., BilevelProblem]] = {
    'quadratic': make_quadratic,
    'multitask': make_multitask,
    'hyperclean': make_hyperclean,
    'logreg': make_logreg,
    'snapshot': _read_snapshot,
}

TOP_LEVEL_KEYS = ('problem', 'runs', 'output_dir', 'timing', 'report', 'gradcheck', 'acceptance')


@dataclass
class ProblemSpec:
    """The problem block: a family name, a seed and builder parameters."""

    family: str
    seed: int = 0
    params: Dict = field(default_factory=dict)

    def validate(self) -> None:
        """Checks the family and the parameter names against its builder."""
        require(self.family in BUILDERS, f'unknown problem family {self.family!r}',
                key='problem.family')
        require(isinstance(self.seed, int) and self.seed >= 0,
                'problem seed must be a non-negative integer', key='problem.seed')
        require(isinstance(self.params, dict), 'problem params must be a mapping',
                key='problem.params')
        sig = inspect.signature(BUILDERS[self.family])
        for name in self.params:
            require(name in sig.parameters and name != 'seed',
                    f'{self.family} has no parameter {name!r}', key=f'problem.params.{name}')
        for name, param in sig.parameters.items():
            if param.default is inspect.Parameter.empty and name != 'seed':
                require(name in self.params, f'{self.family} needs parameter {name!r}',
                        key=f'problem.params.{name}')

    def build(self) -> BilevelProblem:
        """Constructs the problem instance."""
        self.validate()
        try:
            return BUILDERS[self.family](seed=self.seed, **self.params)
        except BilevelError as ex:
            if ex.key is None:
                ex.error_code = ErrorCode.CONFIG
                ex.key = 'problem.params'
            raise


@dataclass
class GradCheck:
    """One line of the gradient check table."""

    method: str
    D: int
    N: int = 0
    threshold: float = 1e-6
    alpha: Optional[float] = None

    def __post_init__(self) -> None:
        self.method = parse_algorithm(self.method)
        require(self.method in (AID, ITD), 'gradcheck methods are AID or ITD',
                key='gradcheck.checks.method')
        for name in ('D', 'N'):
            value = getattr(self, name)
            require(isinstance(value, int) and value >= 0,
                    f'{name} must be a non-negative integer', key=f'gradcheck.checks.{name}')
        require(isinstance(self.threshold, (int, float)) and self.threshold >= 0.0,
                'threshold must be a non-negative number', key='gradcheck.checks.threshold')


@dataclass
class GradcheckConfig:
    """Point, finite difference step and checks for the gradcheck command."""

    x: Optional[object] = None
    h: float = 1e-5
    checks: List[GradCheck] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: Dict) -> 'GradcheckConfig':
        """Parses the gradcheck block."""
        require(isinstance(data, dict), 'gradcheck must be a mapping', key='gradcheck')
        for key in data:
            require(key in ('x', 'h', 'checks'), f'unknown gradcheck key {key!r}',
                    key=f'gradcheck.{key}')
        h = data.get('h', 1e-5)
        require(isinstance(h, (int, float)) and math.isfinite(h) and h > 0.0,
                'h must be a positive number', key='gradcheck.h')
        checks = data.get('checks', [])
        require(isinstance(checks, list), 'checks must be a list', key='gradcheck.checks')
        parsed = []
        for check in checks:
            require(isinstance(check, dict), 'each check must be a mapping',
                    key='gradcheck.checks')
            try:
                parsed.append(GradCheck(**check))
            except TypeError as ex:
                raise BilevelError(ErrorCode.CONFIG, str(ex), key='gradcheck.checks') from ex
        return cls(data.get('x'), float(h), parsed)


# pylint: disable=too-many-instance-attributes
@dataclass
class ExperimentConfig:
    """A parsed experiment config."""

    problem: ProblemSpec
    runs: List[RunConfig] = field(default_factory=list)
    output_dir: str = 'out'
    timing: bool = True
    report: Dict = field(default_factory=lambda: {'bounds': True, 'gradcheck': True})
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    acceptance: Dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        labels = [run.label for run in self.runs]
        for label in labels:
            require(labels.count(label) == 1, f'run label {label!r} is used more than once',
                    key='runs.label')

    @classmethod
    def from_dict(cls, data: Dict) -> 'ExperimentConfig':
        """Parses a config document."""
        require(isinstance(data, dict), 'config must be a mapping', key='config')
        for key in data:
            require(key in TOP_LEVEL_KEYS, f'unknown config key {key!r}', key=key)
        require('problem' in data, 'config needs a problem block', key='problem')
        block = data['problem']
        require(isinstance(block, dict) and 'family' in block, 'problem block needs a family',
                key='problem.family')
        for key in block:
            require(key in ('family', 'seed', 'params'), f'unknown problem key {key!r}',
                    key=f'problem.{key}')
        problem = ProblemSpec(block['family'], block.get('seed', 0), dict(block.get('params', {})))
        problem.validate()
        runs = data.get('runs', [])
        require(isinstance(runs, list), 'runs must be a list', key='runs')
        report = {'bounds': True, 'gradcheck': True}
        report.update(data.get('report', {}))
        timing = data.get('timing', True)
        require(isinstance(timing, bool), 'timing must be true or false', key='timing')
        output_dir = data.get('output_dir', 'out')
        require(isinstance(output_dir, str), 'output_dir must be a string', key='output_dir')
        acceptance = data.get('acceptance', {})
        require(isinstance(acceptance, dict), 'acceptance must be a mapping', key='acceptance')
        return cls(problem=problem,
                   runs=[RunConfig.from_dict(run) for run in runs],
                   output_dir=output_dir,
                   timing=timing,
                   report=report,
                   gradcheck=GradcheckConfig.from_dict(data.get('gradcheck', {})),
                   acceptance=acceptance)

    def apply_overrides(self, output_dir: Optional[str] = None, seed: Optional[int] = None) -> None:
        """Applies the command line --out and --seed overrides."""
        if output_dir is not None:
            self.output_dir = output_dir
        if seed is not None:
            require(seed >= 0, 'seed must be non-negative', key='seed')
            self.problem.seed = seed
            for run in self.runs:
                run.seed = seed


def parse_config_text(text: str, yaml_format: bool = False) -> ExperimentConfig:
    """Parses config text as JSON, or YAML when yaml_format is set."""
    try:
        data = yaml.safe_load(text) if yaml_format else json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as ex:
        raise BilevelError(ErrorCode.CONFIG, f'cannot parse config: {ex}', key='config') from ex
    return ExperimentConfig.from_dict(data)


def load_config(filename: str) -> ExperimentConfig:
    """Reads and parses a config file."""
    try:
        with open(filename, 'r', encoding='utf-8') as config_file:
            text = config_file.read()
    except OSError as ex:
        raise BilevelError(ErrorCode.CONFIG, f'cannot read {filename}: {ex}', key='config') from ex
    suffix = os.path.splitext(filename)[1].lower()
    return parse_config_text(text, yaml_format=suffix in ('.yaml', '.yml'))
