"""JSON snapshots of problem instances.

Matrices are written row-major as nested lists and every scalar as a 64-bit
float, under a top-level "family" key: "quadratic", "hyperclean", "logreg" or
"multitask".
"""

import json
from typing import Dict

from bilevel.errors import BilevelError, ErrorCode
from bilevel.hyperclean import HyperCleanProblem
from bilevel.logreg import LogRegProblem
from bilevel.multitask import MultitaskQuadratic
from bilevel.problem import BilevelProblem
from bilevel.quadratic import QuadraticBilevel

FAMILIES = {
    QuadraticBilevel.family: QuadraticBilevel,
    HyperCleanProblem.family: HyperCleanProblem,
    LogRegProblem.family: LogRegProblem,
    MultitaskQuadratic.family: MultitaskQuadratic,
}


def problem_from_dict(data: Dict) -> BilevelProblem:
    """Rebuilds a problem from its snapshot dict."""
    family = data.get('family')
    if family not in FAMILIES:
        raise BilevelError(ErrorCode.CONFIG, f'unknown problem family {family!r}',
                           key='family')
    return FAMILIES[family].from_dict(data)


def dump_problem(prob: BilevelProblem) -> str:
    """Returns the JSON text of a problem snapshot."""
    return json.dumps(prob.to_dict())


def load_problem(text: str) -> BilevelProblem:
    """Inverse of dump_problem."""
    return problem_from_dict(json.loads(text))


def save_problem(prob: BilevelProblem, filename: str) -> None:
    """Writes a snapshot to filename."""
    with open(filename, 'w', encoding='utf-8') as f:
        f.write(dump_problem(prob))


def read_problem(filename: str) -> BilevelProblem:
    """Reads a snapshot written by save_problem."""
    with open(filename, 'r', encoding='utf-8') as f:
        return load_problem(f.read())
