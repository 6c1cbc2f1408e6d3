#!/usr/bin/env python3
"""
Tests the per-feature regularization family.
"""

import math
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from bilevel.errors import BilevelError, ErrorCode
from bilevel.inner import gd_inner
from bilevel.logreg import make_logreg
from bilevel.problem import UPPER, Batch
from bilevel.theory import central_difference


class TestLogReg(unittest.TestCase):
    """Tests for LogRegProblem"""

    def setUp(self) -> None:
        self.prob = make_logreg(40, 20, 6, 3, 0)
        rng = np.random.default_rng(1)
        self.x = rng.uniform(-2.0, 2.0, self.prob.p)
        self.y = 0.3 * rng.standard_normal(self.prob.q)
        self.v = rng.standard_normal(self.prob.q)

    def test_shapes(self) -> None:
        """One lam per feature, a k x dim classifier"""
        prob = self.prob
        self.assertEqual((prob.p, prob.q, prob.informative), (6, 18, 3))
        self.assertFalse(prob.has_oracle)
        self.assertAlmostEqual(prob.constants.mu, 2.0 * math.exp(-4.0) / 18)
        self.assertIn('mu', prob.constants.estimated)

    def test_noise_features(self) -> None:
        """Class means agree outside the informative features"""
        prob = make_logreg(3000, 5, 4, 2, 3, informative=2)
        gap = [np.mean(prob.X_tr[prob.y_tr == c], axis=0) for c in range(2)]
        self.assertGreater(np.linalg.norm(gap[0][:2] - gap[1][:2]), 2.0)
        self.assertLess(np.linalg.norm(gap[0][2:] - gap[1][2:]), 0.2)

    def test_gradients(self) -> None:
        """First derivatives against central differences"""
        prob, x, y = self.prob, self.x, self.y
        np.testing.assert_allclose(prob.lower_grad_y(x, y),
                                   central_difference(lambda u: prob.lower_value(x, u), y, 1e-6),
                                   atol=1e-7)
        np.testing.assert_allclose(prob.upper_grad_y(x, y),
                                   central_difference(lambda u: prob.upper_value(x, u), y, 1e-6),
                                   atol=1e-7)
        np.testing.assert_array_equal(prob.upper_grad_x(x, y), np.zeros(6))

    def test_second_order(self) -> None:
        """HVP and JVP against central differences of grad_y g"""
        prob, x, y, v = self.prob, self.x, self.y, self.v
        h = 1e-6
        hvp_fd = (prob.lower_grad_y(x, y + h * v) - prob.lower_grad_y(x, y - h * v)) / (2 * h)
        np.testing.assert_allclose(prob.lower_hvp(x, y, v), hvp_fd, atol=1e-6)
        jvp_fd = central_difference(lambda u: float(np.dot(prob.lower_grad_y(u, y), v)), x, h)
        np.testing.assert_allclose(prob.lower_jvp(x, y, v), jvp_fd, atol=1e-7)

    def test_jvp_ignores_batch(self) -> None:
        """The mixed derivative only involves the regularizer"""
        batch = Batch(np.array([1, 1, 4]))
        np.testing.assert_array_equal(self.prob.lower_jvp(self.x, self.y, self.v, batch),
                                      self.prob.lower_jvp(self.x, self.y, self.v))

    def test_evaluation(self) -> None:
        """Chance loss at W = 0, accuracy after fitting, lam group means"""
        prob = self.prob
        self.assertAlmostEqual(prob.upper_value(self.x, np.zeros(prob.q)), math.log(3.0))
        x = np.zeros(prob.p)
        traj = gd_inner(prob, x, np.zeros(prob.q), 1.0 / prob.constants.L, 200)
        self.assertGreater(prob.validation_accuracy(traj.final), 0.6)
        signal, noise = prob.feature_split(np.arange(6.0))
        self.assertEqual((signal, noise), (1.0, 4.0))
        dense = make_logreg(5, 5, 2, 2, 0, informative=2)
        self.assertTrue(math.isnan(dense.feature_split(np.zeros(2))[1]))

    def test_bad_parameters(self) -> None:
        """Builder arguments are checked"""
        for args, kwargs in (((5, 5, 3, 1, 0), {}), ((5, 5, 3, 2, 0), {'informative': 4}),
                             ((5, 5, 3, 2, 0), {'lam_low': 1.0, 'lam_high': 0.0}),
                             ((0, 5, 3, 2, 0), {})):
            with self.assertRaises(BilevelError) as ctx:
                make_logreg(*args, **kwargs)
            self.assertEqual(ctx.exception.get_error_code(), ErrorCode.INVALID_PARAM)


class TestLogRegProperties(unittest.TestCase):
    """Properties of random logistic-regression instances"""

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**20), st.floats(-3.0, 0.0), st.floats(0.0, 3.0))
    def test_hvp_within_bounds(self, seed, lam_low, lam_high) -> None:
        """mu |v|^2 <= v'Hv <= L |v|^2 for lam inside the box"""
        prob = make_logreg(25, 5, 4, 3, seed, lam_low=lam_low, lam_high=lam_high)
        consts = prob.constants
        rng = np.random.default_rng(seed)
        x = rng.uniform(lam_low, lam_high, prob.p)
        y = rng.standard_normal(prob.q)
        for _ in range(3):
            w = rng.standard_normal(prob.q)
            curvature = float(w @ prob.lower_hvp(x, y, w))
            norm_sq = float(w @ w)
            self.assertGreaterEqual(curvature, consts.mu * norm_sq * (1 - 1e-9))
            self.assertLessEqual(curvature, consts.L * norm_sq * (1 + 1e-9))

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**20))
    def test_finite_sum(self, seed) -> None:
        """Deterministic evaluations are the mean of the per-sample ones"""
        prob = make_logreg(10, 6, 3, 2, seed)
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(prob.p)
        y, v = rng.standard_normal((2, prob.q))
        singles = [Batch(np.array([i])) for i in range(prob.n_tr)]
        for name in ('lower_grad_y', 'lower_value'):
            per_sample = [getattr(prob, name)(x, y, batch) for batch in singles]
            np.testing.assert_allclose(np.mean(per_sample, axis=0), getattr(prob, name)(x, y),
                                       atol=1e-12)
        per_sample = [prob.lower_hvp(x, y, v, batch) for batch in singles]
        np.testing.assert_allclose(np.mean(per_sample, axis=0), prob.lower_hvp(x, y, v),
                                   atol=1e-12)
        upper = [prob.upper_value(x, y, Batch(np.array([i]), UPPER)) for i in range(prob.n_val)]
        self.assertAlmostEqual(float(np.mean(upper)), prob.upper_value(x, y), places=12)


if __name__ == '__main__':
    unittest.main()
