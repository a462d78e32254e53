"""
Unit tests for the perturbed iterate harness: mask policies, the emulated
epoch and the verification checks.

@version 0.1.0
@date October 2026
"""

import unittest
import json
import os

import numpy as np

import sys
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from dataset_io import gen_dense_toy, gen_random_sparse, gen_synthetic
from glm_objective import FStarCache, Problem, estimate_fstar, per_sample_smoothness
from perturbed_harness import (
    CheckReport,
    VerificationError,
    check_coupling_inequality,
    check_equivalence,
    check_equivalent_update,
    check_overlap_bound,
    check_unbiasedness,
    check_variance_bound,
    parse_mask_policy,
    simulate_epoch
)
from serial_solvers import AccSVRGEpochs, Budget, params_for_problem


def small_problem(seed=0):
    return Problem.build(gen_random_sparse(30, 10, 0.3, seed=seed), 1e-2)


class TestMaskPolicy(unittest.TestCase):

    def test_known_policies(self):
        self.assertEqual(parse_mask_policy('none'), ('none', 0.0))
        self.assertEqual(parse_mask_policy('All-Missing'), ('all-missing', 1.0))
        self.assertEqual(parse_mask_policy('bernoulli:0.3'), ('bernoulli', 0.3))
        self.assertEqual(parse_mask_policy('random-bernoulli(0.5)'), ('bernoulli', 0.5))

    def test_invalid_policies(self):
        with self.assertRaises(ValueError):
            parse_mask_policy('bernoulli:1.5')
        with self.assertRaises(ValueError):
            parse_mask_policy('sometimes')
        with self.assertRaises(ValueError):
            parse_mask_policy('bernoulli:abc')


class TestSimulateEpoch(unittest.TestCase):
    """Test cases for the emulated epoch."""

    def setUp(self):
        self.p = small_problem(seed=1)
        self.params = params_for_problem(self.p, seed=3)

    def test_zero_overlap_is_serial_epoch(self):
        trace = simulate_epoch(self.p, self.params, tau=0, seed=3)
        method = AccSVRGEpochs(self.p, self.params)
        method.start_restart(np.zeros(self.p.d))
        y_snap = method.run_epoch(0, 0)
        np.testing.assert_array_equal(trace.z_final, method.z)
        np.testing.assert_array_equal(trace.y_snap, y_snap)
        np.testing.assert_array_equal(trace.z_hat, trace.z_virtual)

    def test_no_missing_updates_means_consistent_reads(self):
        trace = simulate_epoch(self.p, self.params, tau=5, mask_policy='none')
        np.testing.assert_array_equal(trace.z_hat, trace.z_virtual)
        X, _ = trace.overlap_terms()
        np.testing.assert_array_equal(X, np.zeros(trace.m))

    def test_reads_replay_from_masks(self):
        trace = simulate_epoch(self.p, self.params, tau=4, mask_policy='bernoulli:0.5', seed=2)
        np.testing.assert_allclose(trace.replay_reads(), trace.z_hat, rtol=1e-13, atol=1e-15)
        self.assertLess(trace.virtual_recursion_gap(), 1e-12)

    def test_all_missing_perturbs_reads(self):
        trace = simulate_epoch(self.p, self.params, tau=3, mask_policy='all-missing')
        self.assertTrue(np.all(trace.masks))
        self.assertFalse(np.array_equal(trace.z_hat, trace.z_virtual))

    def test_mask_window(self):
        trace = simulate_epoch(self.p, self.params, tau=2, mask_policy='all-missing')
        size = trace.offsets[5] - trace.offsets[4]
        self.assertEqual(trace.mask(4, 5).size, size)
        with self.assertRaises(IndexError):
            trace.mask(2, 5)

    def test_tau_clamped(self):
        params = params_for_problem(self.p, m_override=4)
        with self.assertLogs('perturbed_harness', level='WARNING'):
            trace = simulate_epoch(self.p, params, tau=10)
        self.assertEqual(trace.tau, 4)

    def test_invalid_inputs(self):
        with self.assertRaises(ValueError):
            simulate_epoch(self.p, self.params, tau=-1)
        with self.assertRaises(ValueError):
            simulate_epoch(self.p.with_regularizer('dense'), self.params, tau=1)


class TestOverlapChecks(unittest.TestCase):

    def setUp(self):
        self.p = small_problem(seed=2)
        self.params = params_for_problem(self.p, m_override=20)

    def test_too_few_trials(self):
        trace = simulate_epoch(self.p, self.params, tau=2)
        with self.assertRaises(VerificationError):
            check_overlap_bound(trace, self.p.profile.delta, trials=50)

    def test_consistent_reads_satisfy_bound(self):
        trace = simulate_epoch(self.p, self.params, tau=2, mask_policy='none')
        report = check_overlap_bound(trace, self.p.profile.delta, trials=100)
        self.assertFalse(report.violated)
        self.assertEqual(report.details['tau'], 2)
        self.assertEqual(report.trials, 100)

    def test_equivalent_update(self):
        trace = simulate_epoch(self.p, self.params, tau=3, mask_policy='bernoulli:0.5', seed=1)
        report = check_equivalent_update(trace)
        self.assertFalse(report.violated)


class TestExactChecks(unittest.TestCase):
    """Enumeration-based checks."""

    def test_variance_bound(self):
        report = check_variance_bound(small_problem(seed=3), trials=10)
        self.assertFalse(report.violated)
        self.assertFalse(report.details['dense_data'])

    def test_variance_bound_nominal_smoothness(self):
        """The bound uses max_i L_i, which exceeds the nominal problem constant for large mu."""
        for mu in (1.0, 10.0):
            p = Problem.build(gen_random_sparse(50, 20, 0.2, seed=0), mu, 'nominal')
            report = check_variance_bound(p, trials=10)
            self.assertFalse(report.violated)
            self.assertEqual(report.details['L'], float(per_sample_smoothness(p).max()))
            self.assertGreater(report.details['L'], p.L)

    def test_variance_bound_dense_data(self):
        p = Problem.build(gen_dense_toy(40, 6, seed=0), 1e-2)
        report = check_variance_bound(p, trials=5)
        self.assertFalse(report.violated)
        self.assertIn('classic_form_gap', report.details)

    def test_unbiasedness(self):
        p = small_problem(seed=4)
        rng = np.random.default_rng(0)
        points = [(rng.standard_normal(p.d), rng.standard_normal(p.d)) for _ in range(5)]
        report = check_unbiasedness(p, points)
        self.assertFalse(report.violated)
        self.assertEqual(report.trials, 5)
        with self.assertRaises(VerificationError):
            check_unbiasedness(p, [])

    def test_enumeration_limit(self):
        p = Problem.build(gen_synthetic(600, seed=0), 1e-3)
        with self.assertRaises(VerificationError):
            check_variance_bound(p, trials=1)

    def test_coupling_inequality(self):
        p = small_problem(seed=5)
        estimate = estimate_fstar(p, 100.0, cache=FStarCache())
        report = check_coupling_inequality(p, params_for_problem(p), estimate.x_star, estimate.f_star, trials=10)
        self.assertFalse(report.violated)
        self.assertEqual(report.details['L'], p.L)


class TestEquivalence(unittest.TestCase):

    def test_dense_toy_schemes_agree(self):
        p = Problem.build(gen_dense_toy(40, 5, seed=1), 1e-2)
        report = check_equivalence(p, budget=Budget(max_passes=8.0))
        self.assertFalse(report.violated, report.details)
        self.assertEqual(report.details['deviations']['async_single_thread'], 0.0)

    def test_sparse_data_rejected(self):
        with self.assertRaises(VerificationError):
            check_equivalence(small_problem())


class TestCheckReport(unittest.TestCase):

    def test_json(self):
        report = CheckReport(check='x', trials=3, max_margin=-0.5, violated=False, worst_k=1,
                             details={'tau': 2})
        loaded = json.loads(report.to_json())
        self.assertEqual(loaded['check'], 'x')
        self.assertEqual(loaded['details'], {'tau': 2})
        self.assertIsNone(CheckReport('y', 1, 0.0, False).to_dict()['worst_k'])


if __name__ == '__main__':
    unittest.main()
