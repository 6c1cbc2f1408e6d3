#!/usr/bin/env python3
"""
Tests the finite difference references and the analysis bounds.
"""

import dataclasses
import math
import unittest

import numpy as np
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from bilevel.errors import BilevelError, ErrorCode
from bilevel.hyperclean import make_hyperclean
from bilevel.hypergrad import aid_estimate, itd_estimate
from bilevel.inner import gd_inner
from bilevel.optimizers import BilevelRunner, RunConfig
from bilevel.problem import SmoothnessConstants
from bilevel.quadratic import make_quadratic
from bilevel.theory import (aid_error_bound, cg_factor, central_difference, compute_bounds,
                            dense_hessian, exact_neumann_expectation, itd_error_bound,
                            neumann_bias_bound, recommended_itd_steps, solve_lower,
                            tracking_error_bound)


class TestReferences(unittest.TestCase):
    """Tests the ground-truth helpers"""

    def test_central_difference(self) -> None:
        """Central differences of a quadratic are exact up to round-off"""
        x = np.array([1.0, -2.0, 0.5])
        np.testing.assert_allclose(central_difference(lambda u: float(u @ u), x, 1e-4), 2 * x,
                                   atol=1e-8)
        with self.assertRaises(BilevelError) as ctx:
            central_difference(lambda u: 0.0, x, 1e-12)
        self.assertEqual(ctx.exception.get_error_code(), ErrorCode.INVALID_PARAM)

    def test_dense_hessian(self) -> None:
        """HVPs against unit vectors assemble A"""
        prob = make_quadratic(2, 4, 3.0, 0.0, 2, n_samples=1)
        np.testing.assert_allclose(dense_hessian(prob, np.zeros(2), np.zeros(4)), prob.A,
                                   atol=1e-14)

    def test_dense_hessian_too_large(self) -> None:
        """Large lower levels are refused"""
        prob = make_quadratic(1, 51, 2.0, 0.0, 0, n_samples=1)
        with self.assertRaises(BilevelError) as ctx:
            dense_hessian(prob, np.zeros(1), np.zeros(51))
        self.assertEqual(ctx.exception.get_error_code(), ErrorCode.DIMENSION)

    def test_neumann_expectation_limit(self) -> None:
        """The series converges to the linear solve"""
        prob = make_quadratic(2, 4, 5.0, 0.0, 3, n_samples=1)
        v0 = np.arange(1.0, 5.0)
        series = exact_neumann_expectation(prob, np.zeros(2), np.zeros(4), v0, 400, 0.2)
        np.testing.assert_allclose(series, np.linalg.solve(prob.A, v0), atol=1e-10)

    def test_solve_lower_without_oracle(self) -> None:
        """Gradient descent finds the lower solution of hyper-cleaning"""
        prob = make_hyperclean(20, 10, 3, 2, 0.2, 0.5, 0)
        x = np.zeros(prob.p)
        y = solve_lower(prob, x, tol=1e-10)
        self.assertLess(np.linalg.norm(prob.lower_grad_y(x, y)), 1e-8)


class TestBounds(unittest.TestCase):
    """Tests the analysis constants"""

    def setUp(self) -> None:
        self.consts = SmoothnessConstants(M=2.0, L=10.0, mu=1.0)

    def test_cg_factor(self) -> None:
        """(sqrt(kappa) - 1) / (sqrt(kappa) + 1)"""
        self.assertEqual(cg_factor(1.0), 0.0)
        self.assertAlmostEqual(cg_factor(9.0), 0.5)

    def test_compute_bounds(self) -> None:
        """The recursion constants shrink with more inner steps"""
        shallow = compute_bounds(self.consts, 0.1, 1e-4, 0.1, 1, 1, 1, 1, 1, 1, 1)
        deep = compute_bounds(self.consts, 0.1, 1e-4, 0.1, 200, 10, 50, 1, 1, 1, 1)
        self.assertLess(deep.delta_DN, shallow.delta_DN)
        self.assertLess(deep.lam, 1.0)
        self.assertLess(deep.neumann_bias, shallow.neumann_bias)
        self.assertEqual(deep.L_Phi, self.consts.l_phi)
        self.assertEqual(set(deep.to_dict()), {
            'L_Phi', 'Gamma', 'delta_DN', 'Omega', 'lam', 'omega', 'Delta_var', 'nu',
            'neumann_bias', 'neumann_variance', 'sgd_floor'
        })

    def test_neumann_bias_bound(self) -> None:
        """M (1 - eta mu)^(Q+1) / mu"""
        self.assertAlmostEqual(neumann_bias_bound(self.consts, 0.1, 2), 2.0 * 0.9**3)
        self.assertAlmostEqual(neumann_bias_bound(self.consts, 0.1, 2, M=1.0), 0.9**3)

    def test_tracking_bound(self) -> None:
        """Without inner steps the tracking recursion does not contract"""
        bounds = compute_bounds(self.consts, 0.1, 1e-4, 0.1, 0, 1, 1, 1, 1, 1, 1)
        self.assertTrue(math.isinf(tracking_error_bound(self.consts, bounds, 0, 1, 1.0, [1.0])))
        bounds = compute_bounds(self.consts, 0.1, 1e-4, 0.1, 100, 1, 1, 1, 1, 1, 1)
        finite = tracking_error_bound(self.consts, bounds, 100, 1, 1.0, [1.0, 0.5])
        self.assertTrue(math.isfinite(finite) and finite > 0.0)

    def test_itd_bound_holds(self) -> None:
        """The measured ITD error stays under its bound"""
        prob = make_quadratic(3, 4, 10.0, 0.0, 5, n_samples=1)
        x = np.full(3, 0.5)
        alpha = 1.0 / prob.constants.L
        y_star = prob.lower_solution(x)
        for depth in (1, 5, 20, 60):
            traj = gd_inner(prob, x, np.zeros(4), alpha, depth)
            error = np.linalg.norm(itd_estimate(prob, traj).grad - prob.hypergradient(x))
            bound = itd_error_bound(prob.constants, alpha, depth, float(np.linalg.norm(y_star)))
            self.assertLessEqual(error, bound)

    def test_recommended_steps(self) -> None:
        """Tighter targets need more inner steps"""
        loose = recommended_itd_steps(self.consts, 0.1, 1e-1, 1.0)
        tight = recommended_itd_steps(self.consts, 0.1, 1e-4, 1.0)
        self.assertGreater(tight, loose)
        self.assertRaises(BilevelError, recommended_itd_steps, self.consts, 0.1, 0.0, 1.0)

    def test_compute_bounds_values(self) -> None:
        """Every constant at a hand-evaluated parameter set"""
        consts = SmoothnessConstants(M=2.0, L=4.0, mu=1.0, tau=0.5, rho=0.25, sigma=1.0)
        bounds = compute_bounds(consts, 0.25, 0.01, 0.125, 3, 2, 4, 5, 6, 7, 8)
        # kappa = 4, CG factor 1/3, SGD contraction (3/5)^(2D), coupling term 23
        expected = {
            'L_Phi': 4.0 + 34.0 + 70.0 + 8.0,
            'Gamma': 48.0 + 3.0 + 6 * 16 * 9 * 4.5**2,
            'delta_DN': 17547.0 * 0.75**3 + 384.0 / 81.0,
            'Omega': 8 * (0.16 + 0.16 + 0.64)**2,
            'lam': 0.6**6 * (2 + 4e-4 * 16 * 23**2),
            'omega': 4e-4 * 16 * 0.6**6,
            'Delta_var': 256.0 / 7 + 130.0 * 4 / 6 + 32.0 + 1024 * 0.875**8,
            'nu': 1.25 * 23**2,
            'neumann_bias': 2 * 0.875**5,
            'neumann_variance': 0.5 + 16 * 0.875**10 + 8.0 / 6,
            'sgd_floor': 0.05,
        }
        actual = bounds.to_dict()
        for key, value in expected.items():
            self.assertTrue(math.isclose(actual[key], value, rel_tol=1e-12), key)


class TestBoundsHold(unittest.TestCase):
    """Measured errors against the analysis bounds on random quadratics"""

    # pylint: disable=too-many-arguments
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**20), st.floats(2.0, 50.0), st.integers(0, 20), st.integers(0, 4))
    def test_aid_error_bound(self, seed, kappa, D, N) -> None:
        """|AID - grad Phi|^2 stays under the inner plus CG error bound"""
        prob = make_quadratic(3, 4, kappa, 0.0, seed, n_samples=1)
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(3)
        y0, v0 = 2.0 * rng.standard_normal(4), 2.0 * rng.standard_normal(4)
        alpha = 1.0 / prob.constants.L
        y_star = prob.lower_solution(x)
        v_star = scipy.linalg.cho_solve(prob.chol, prob.upper_grad_y(x, y_star))
        traj = gd_inner(prob, x, y0, alpha, D)
        est = aid_estimate(prob, x, traj.final, v0, N)
        error_sq = float(np.sum((est.grad - prob.hypergradient(x))**2))
        bound = aid_error_bound(prob.constants, alpha, D, N, float(np.sum((y0 - y_star)**2)),
                                float(np.sum((v0 - v_star)**2)))
        self.assertLessEqual(error_sq, bound * (1 + 1e-9) + 1e-20)

    @settings(max_examples=3, deadline=None)
    @given(st.integers(0, 2**20))
    def test_tracking_error_bound(self, seed) -> None:
        """Mean |y_k^D - y*(x_k)|^2 of stocBiO over seeds stays under the
           tracking recursion bound at every k
        """
        prob = make_quadratic(2, 4, 10.0, 1.0, seed, n_samples=64)
        consts = prob.constants
        runs, K, D, S = 50, 4, 4, 2
        config = RunConfig('STOCBIO', label='track', K=K, D=D, Q=3, B=2, S=S, Df=2, Dg=2, x0=0.5)
        tracking = np.zeros(K)
        grad_sq = np.zeros(K)
        for r in range(runs):
            trace = BilevelRunner(prob, dataclasses.replace(config, seed=r), timing=False).run()
            tracking += [row.tracking_err**2 for row in trace.rows[:K]]
            grad_sq += [row.grad_norm_sq_oracle for row in trace.rows[:K]]
        tracking /= runs
        grad_sq /= runs
        runner = BilevelRunner(prob, config)
        bounds = compute_bounds(consts, runner.alpha, runner.beta, runner.eta, D, 0, 3, S, 2, 2, 2)
        self.assertLess(bounds.lam, 1.0)
        y0_dist_sq = float(np.sum(prob.lower_solution(np.full(2, 0.5))**2))
        for k in range(K):
            bound = tracking_error_bound(consts, bounds, D, S, y0_dist_sq, list(grad_sq[:k]))
            self.assertLessEqual(tracking[k], bound, k)


if __name__ == '__main__':
    unittest.main()
