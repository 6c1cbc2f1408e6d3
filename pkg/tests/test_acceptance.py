#!/usr/bin/env python3
"""
Tests the acceptance suite.

The deterministic checks run on reduced instance counts. The statistical
ones (6 to 9 and 11) keep their report sizes, where the sampled ratios
are stable.
"""

import json
import unittest

from bilevel.acceptance import (CRITERIA, TIME_LIMITS, CriterionResult, rel_err, run_acceptance,
                                run_criterion)
from bilevel.errors import BilevelError, ErrorCode


class TestCriteria(unittest.TestCase):
    """Runs each criterion"""

    def test_hypergradient_exactness(self) -> None:
        """AID at y* with N = q is exact"""
        result = run_criterion(1, {'instances': 3})
        self.assertTrue(result.passed, result.details)
        self.assertEqual(result.name, 'hypergradient exactness')

    def test_finite_difference_agreement(self) -> None:
        """ITD and AID agree with central differences"""
        result = run_criterion(2, {'instances': 2, 'kappas': [1.0, 10.0]})
        self.assertTrue(result.passed, result.details)

    def test_itd_exponential_decay(self) -> None:
        """The ITD error contracts at the inner rate"""
        result = run_criterion(3, {'instances': 2})
        self.assertTrue(result.passed, result.details)

    def test_cg_law(self) -> None:
        """CG errors stay under the Chebyshev bound"""
        result = run_criterion(4, {'systems': 5})
        self.assertTrue(result.passed, result.details)

    def test_neumann_bias(self) -> None:
        """Sampled Neumann estimates average to their exact expectation"""
        result = run_criterion(5, {'draws': 2000, 'mc_orders': [1, 5], 'max_order': 10})
        self.assertTrue(result.passed, result.details)
        self.assertTrue(result.details['bias_within_bound'])
        self.assertEqual(result.details['time_limit'], 30.0)

    def test_neumann_variance(self) -> None:
        """Doubling the Hessian batch halves the variance"""
        result = run_criterion(6)
        self.assertTrue(result.passed, result.details)

    def test_rate_trend(self) -> None:
        """The running average decays like 1/K with theory stepsizes"""
        result = run_criterion(7)
        self.assertTrue(result.passed, result.details)
        self.assertEqual(result.details['kappa'], 2.0)
        self.assertEqual(sorted(result.details['ratios']), ['AID', 'ITD'])

    def test_stochastic_floor(self) -> None:
        """Larger batches lower the stocBiO plateau"""
        result = run_criterion(8)
        self.assertTrue(result.passed, result.details)

    def test_warm_start(self) -> None:
        """Warm starts spend no more HVPs than cold starts"""
        result = run_criterion(9)
        self.assertTrue(result.passed, result.details)
        medians = result.details['median_hv_g']
        self.assertLessEqual(medians['warm'], medians['cold'])

    def test_hyperclean_cleaning(self) -> None:
        """stocBiO down-weights corrupted samples within the time cap"""
        result = run_criterion(11)
        self.assertTrue(result.passed, result.details)
        self.assertGreater(result.details['median_weight_gap'], 0.0)
        self.assertLessEqual(result.seconds, 60.0)

    def test_counter_structure(self) -> None:
        """Per-iteration counters of both deterministic methods"""
        result = run_criterion(10)
        self.assertTrue(result.passed, result.details)
        self.assertEqual(result.details['aid'], [(2, 8, 1, 4)])
        self.assertEqual(result.details['itd'], [(2, 8, 8, 7)])

    def test_task_sampling_variance(self) -> None:
        """Task-sampled variance scales as 1/|B|"""
        result = run_criterion(12, {'replicates': 300})
        self.assertTrue(result.passed, result.details)


class TestCriterionRunner(unittest.TestCase):
    """Tests the criterion runner"""

    def test_unknown(self) -> None:
        """Criterion numbers outside 1..12 are a config error"""
        self.assertEqual(sorted(CRITERIA), list(range(1, 13)))
        with self.assertRaises(BilevelError) as ctx:
            run_criterion(13)
        self.assertEqual(ctx.exception.get_error_code(), ErrorCode.CONFIG)

    def test_bad_override(self) -> None:
        """An override naming a parameter the criterion lacks is a config error"""
        with self.assertRaises(BilevelError) as ctx:
            run_criterion(10, {'depth': 3})
        self.assertEqual(ctx.exception.key, 'acceptance.overrides.10')

    def test_failure_is_reported(self) -> None:
        """A check that does not hold is reported as FAIL"""
        result = run_criterion(10, {'D': 0, 'K': 1})
        self.assertFalse(result.passed)
        self.assertIn('FAIL', str(result))

    def test_time_limit(self) -> None:
        """A criterion that overruns its time limit fails"""
        result = run_criterion(10, time_limit=0.0)
        self.assertFalse(result.passed)
        self.assertTrue(result.details['over_time'])
        self.assertEqual(TIME_LIMITS, {1: 1.0, 5: 30.0, 11: 60.0})
        result = run_criterion(1, {'instances': 2})
        self.assertTrue(result.passed, result.details)
        self.assertEqual(result.details['time_limit'], 1.0)
        self.assertNotIn('time_limit', run_criterion(10).details)

    def test_run_acceptance(self) -> None:
        """Selection, overrides and progress lines"""
        lines = []
        results = run_acceptance({
            'only': [1, 10],
            'overrides': {
                '1': {
                    'instances': 2
                }
            },
            'seed': 3
        },
                                 progress=lines.append)
        self.assertEqual([r.number for r in results], [1, 10])
        self.assertEqual(len(lines), 2)
        self.assertTrue(lines[0].startswith(' 1 PASS hypergradient exactness'))
        json.dumps([r.to_dict() for r in results])

    def test_result_dict(self) -> None:
        """Details are converted to plain JSON types"""
        result = CriterionResult(4, 'CG law', True, {'worst': [1.5, (2, 3)]}, 0.25)
        self.assertEqual(result.to_dict()['details'], {'worst': [1.5, [2, 3]]})
        self.assertEqual(str(result), ' 4 PASS CG law (0.2s)')
        self.assertAlmostEqual(rel_err([1.0, 1.0], [1.0, 0.0]), 1.0)


if __name__ == '__main__':
    unittest.main()
