#!/usr/bin/env python3
"""
Tests the run trace and its CSV form.
"""

import os
import tempfile
import unittest

import numpy as np

from bilevel.errors import BilevelError, ErrorCode
from bilevel.trace import CSV_HEADER, RunTrace, TraceRow, parse_csv, read_csv


def make_trace() -> RunTrace:
    """A three row trace: two iterations and the final point"""
    trace = RunTrace('demo', 'AID', 0.1, 0.01)
    trace.append(TraceRow(0, 4.0, 5.0, 0.5, 'cg_iters=2', 2, 3, 1, 2, 1.5, 10.0), [0.0, 0.0])
    trace.append(TraceRow(1, 1.0, 2.0, 0.25, 'cg_iters=2', 4, 6, 2, 4, 1.25, 8.0), [1.0, 0.0])
    trace.append(TraceRow(2, None, 0.5, None, '', 4, 6, 2, 4, None, 7.0), [1.0, 1.0])
    return trace


class TestRunTrace(unittest.TestCase):
    """Tests for RunTrace"""

    def test_best_point(self) -> None:
        """x_best is the iterate with the smallest estimate"""
        trace = make_trace()
        self.assertEqual(trace.best_k, 1)
        self.assertEqual(trace.best_est, 1.0)
        np.testing.assert_array_equal(trace.output_point, [1.0, 0.0])
        np.testing.assert_array_equal(trace.x_final, [1.0, 1.0])
        self.assertEqual(len(trace), 3)

    def test_counters(self) -> None:
        """Per-iteration counters come from the estimate rows"""
        trace = make_trace()
        deltas = [c.as_tuple() for c in trace.per_iteration_counters()]
        self.assertEqual(deltas, [(2, 3, 1, 2), (2, 3, 1, 2)])
        self.assertEqual(trace.final_counters.as_tuple(), (4, 6, 2, 4))

    def test_backwards_counters(self) -> None:
        """Counters may never decrease"""
        trace = make_trace()
        with self.assertRaises(BilevelError) as ctx:
            trace.append(TraceRow(3, 1.0, None, None, '', 5, 5, 5, 5), [0.0, 0.0])
        self.assertEqual(ctx.exception.get_error_code(), ErrorCode.INTERNAL)

    def test_oracle_statistics(self) -> None:
        """Average and running minimum of the oracle column"""
        trace = make_trace()
        self.assertEqual(trace.average_oracle_grad_sq(), 3.5)
        self.assertEqual(trace.running_min_oracle(), [5.0, 2.0, 0.5])
        self.assertEqual(trace.upper_losses(), [10.0, 8.0, 7.0])
        empty = RunTrace('none', 'ITD')
        with self.assertRaises(BilevelError) as ctx:
            empty.average_oracle_grad_sq()
        self.assertEqual(ctx.exception.get_error_code(), ErrorCode.NO_ORACLE)

    def test_summary(self) -> None:
        """The summary carries the final state"""
        summary = make_trace().summary()
        self.assertEqual(summary['iterations'], 2)
        self.assertEqual(summary['final_grad_norm_sq_oracle'], 0.5)
        self.assertEqual(summary['x_best'], [1.0, 0.0])
        self.assertEqual(summary['counters'], {'gc_f': 4, 'gc_g': 6, 'jv_g': 2, 'hv_g': 4})


class TestCsv(unittest.TestCase):
    """Tests the CSV layout"""

    def test_layout(self) -> None:
        """Fixed header, empty fields for missing values"""
        lines = make_trace().to_csv().splitlines()
        self.assertEqual(lines[0], ','.join(CSV_HEADER))
        self.assertEqual(lines[1], '0,4,5,0.5,cg_iters=2,2,3,1,2,1.5')
        self.assertEqual(lines[3], '2,,0.5,,,4,6,2,4,')

    def test_read_back(self) -> None:
        """A written trace reads back with full precision"""
        trace = RunTrace('p', 'ITD')
        value = 1.0 / 3.0
        trace.append(TraceRow(0, value, None, None, 'D=3', 2, 3, 3, 2, None), [0.0])
        with tempfile.TemporaryDirectory() as tmp:
            filename = os.path.join(tmp, 'p.csv')
            trace.write_csv(filename)
            rows = read_csv(filename)
        self.assertEqual(rows[0].grad_norm_sq_est, value)
        self.assertIsNone(rows[0].grad_norm_sq_oracle)
        self.assertIsNone(rows[0].wall_ms)
        self.assertEqual(rows[0].inner_diag, 'D=3')

    def test_bad_header(self) -> None:
        """Files with another header are rejected"""
        with self.assertRaises(BilevelError) as ctx:
            parse_csv('k,x\n0,1\n')
        self.assertEqual(ctx.exception.get_error_code(), ErrorCode.MISMATCH)


if __name__ == '__main__':
    unittest.main()
