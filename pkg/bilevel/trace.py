"""Run traces: one row per outer iteration plus the final point, written
   as CSV with a fixed header.

   Row k < K describes the iterate x_k at which the k-th estimate was
   built, with the counters accumulated once that iteration finished. The
   last row (k = K) holds the final iterate, where only the oracle columns
   are filled in.
"""

import csv
import io
import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from bilevel.errors import BilevelError, ErrorCode
from bilevel.problem import CostCounters

CSV_HEADER = [
    'k', 'grad_norm_sq_est', 'grad_norm_sq_oracle', 'tracking_err', 'inner_diag', 'gc_f', 'gc_g',
    'jv_g', 'hv_g', 'wall_ms'
]


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return ''
    return f'{value:.17g}'


def _parse(text: str) -> Optional[float]:
    if text == '':
        return None
    return float(text)


# pylint: disable=too-many-instance-attributes
@dataclass
class TraceRow:
    """One row of a RunTrace. None marks a value that was not computed."""

    k: int
    grad_norm_sq_est: Optional[float]
    grad_norm_sq_oracle: Optional[float]
    tracking_err: Optional[float]
    inner_diag: str
    gc_f: int
    gc_g: int
    jv_g: int
    hv_g: int
    wall_ms: Optional[float] = None
    upper_loss: Optional[float] = None

    @property
    def counters(self) -> CostCounters:
        """The cumulative counters as a CostCounters."""
        return CostCounters(self.gc_f, self.gc_g, self.jv_g, self.hv_g)

    def csv_fields(self) -> List[str]:
        """Returns the row formatted for CSV_HEADER."""
        return [
            str(self.k),
            _fmt(self.grad_norm_sq_est),
            _fmt(self.grad_norm_sq_oracle),
            _fmt(self.tracking_err), self.inner_diag,
            str(self.gc_f),
            str(self.gc_g),
            str(self.jv_g),
            str(self.hv_g),
            _fmt(self.wall_ms)
        ]

    @classmethod
    def from_csv(cls, record: Dict[str, str]) -> 'TraceRow':
        """Parses a csv.DictReader record."""
        return cls(k=int(record['k']),
                   grad_norm_sq_est=_parse(record['grad_norm_sq_est']),
                   grad_norm_sq_oracle=_parse(record['grad_norm_sq_oracle']),
                   tracking_err=_parse(record['tracking_err']),
                   inner_diag=record['inner_diag'],
                   gc_f=int(record['gc_f']),
                   gc_g=int(record['gc_g']),
                   jv_g=int(record['jv_g']),
                   hv_g=int(record['hv_g']),
                   wall_ms=_parse(record['wall_ms']))


class RunTrace:
    """The record of one optimizer run."""

    def __init__(self, label: str, algorithm: str, alpha: float = math.nan,
                 beta: float = math.nan) -> None:
        self.label = label
        self.algorithm = algorithm
        self.alpha = alpha
        self.beta = beta
        self.rows: List[TraceRow] = []
        self.x_final: Optional[np.ndarray] = None
        self.x_best: Optional[np.ndarray] = None
        self.y_final: Optional[np.ndarray] = None
        self.best_k: Optional[int] = None
        self.stopped_early = False
        self.wall_ms_total = 0.0

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, row: TraceRow, x) -> None:
        """Adds a row. x is the iterate the row describes; the one with the
           smallest estimated squared hypergradient becomes x_best.
        """
        if self.rows and min(row.counters.since(self.rows[-1].counters).as_tuple()) < 0:
            raise BilevelError(ErrorCode.INTERNAL, 'trace counters went backwards')
        self.rows.append(row)
        est = row.grad_norm_sq_est
        if est is not None and (self.best_k is None or est < self.best_est):
            self.best_k = row.k
            self.x_best = np.array(x, dtype=np.float64)
        self.x_final = np.array(x, dtype=np.float64)

    @property
    def best_est(self) -> float:
        """Estimated squared hypergradient at x_best (inf if none)."""
        if self.best_k is None:
            return math.inf
        return self.rows[self.best_k].grad_norm_sq_est

    @property
    def output_point(self) -> Optional[np.ndarray]:
        """x_best when any estimate was taken, else the final iterate."""
        return self.x_best if self.x_best is not None else self.x_final

    @property
    def final_counters(self) -> CostCounters:
        """Counters at the end of the run."""
        if not self.rows:
            return CostCounters()
        return self.rows[-1].counters

    def per_iteration_counters(self) -> List[CostCounters]:
        """Counters spent by each iteration (one entry per estimate row)."""
        deltas = []
        previous = CostCounters()
        for row in self.rows:
            if row.grad_norm_sq_est is None:
                continue
            deltas.append(row.counters.since(previous))
            previous = row.counters
        return deltas

    def oracle_grad_sq(self) -> List[float]:
        """Oracle squared hypergradient norms of the rows that have one."""
        return [row.grad_norm_sq_oracle for row in self.rows if row.grad_norm_sq_oracle is not None]

    def average_oracle_grad_sq(self) -> float:
        """Mean oracle squared hypergradient over x_0..x_{K-1}."""
        values = [
            row.grad_norm_sq_oracle for row in self.rows
            if row.grad_norm_sq_oracle is not None and row.grad_norm_sq_est is not None
        ]
        if not values:
            raise BilevelError(ErrorCode.NO_ORACLE, f'run {self.label} has no oracle values')
        return float(np.mean(values))

    def running_min_oracle(self) -> List[float]:
        """Running minimum of the oracle squared hypergradient."""
        return list(np.minimum.accumulate(self.oracle_grad_sq()))

    def upper_losses(self) -> List[float]:
        """Upper objective values in row order (rows without one skipped)."""
        return [row.upper_loss for row in self.rows if row.upper_loss is not None]

    def summary(self) -> Dict:
        """JSON friendly summary of the run."""
        last = self.rows[-1] if self.rows else None
        counters = self.final_counters
        return {
            'label': self.label,
            'algorithm': self.algorithm,
            'alpha': self.alpha,
            'beta': self.beta,
            'iterations': max(0, len(self.rows) - 1),
            'stopped_early': self.stopped_early,
            'final_grad_norm_sq_oracle': None if last is None else last.grad_norm_sq_oracle,
            'final_upper_loss': None if last is None else last.upper_loss,
            'best_k': self.best_k,
            'best_grad_norm_sq_est': None if self.best_k is None else self.best_est,
            'x_final': None if self.x_final is None else self.x_final.tolist(),
            'x_best': None if self.output_point is None else self.output_point.tolist(),
            'upper_loss': self.upper_losses(),
            'counters': {
                'gc_f': counters.gc_f,
                'gc_g': counters.gc_g,
                'jv_g': counters.jv_g,
                'hv_g': counters.hv_g,
            },
            'wall_ms': self.wall_ms_total,
        }

    def to_csv(self) -> str:
        """Returns the trace as CSV text."""
        out = io.StringIO()
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow(row.csv_fields())
        return out.getvalue()

    def write_csv(self, filename: str) -> None:
        """Writes the trace to filename."""
        with open(filename, 'w', encoding='utf-8', newline='') as csv_file:
            csv_file.write(self.to_csv())


def parse_csv(text: str) -> List[TraceRow]:
    """Parses CSV text written by RunTrace.to_csv."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != CSV_HEADER:
        raise BilevelError(ErrorCode.MISMATCH, f'unexpected trace header {reader.fieldnames}')
    return [TraceRow.from_csv(record) for record in reader]


def read_csv(filename: str) -> List[TraceRow]:
    """Reads a trace file written by RunTrace.write_csv."""
    with open(filename, 'r', encoding='utf-8', newline='') as csv_file:
        return parse_csv(csv_file.read())
