"""
Unit tests for the objective module: losses and gradients in both
regularizer modes, the sparse SVRG estimator, smoothness constants,
property helpers and the f* estimate with its cache.

@version 0.1.0
@date October 2026
"""

import unittest
import tempfile
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import optimize
from scipy.special import expit

import sys
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from dataset_io import DatasetFormatError, dataset_hash, gen_random_sparse, gen_synthetic, parse_libsvm
from glm_objective import (
    DimensionError,
    FStarCache,
    Problem,
    SnapshotContext,
    StaleSnapshotError,
    check_interpolation,
    check_quadratic_growth,
    estimate_fstar,
    estimator_matrix,
    full_gradient,
    gradient_and_derivatives,
    loss_value,
    partial_gradient,
    partition_bounds,
    per_sample_smoothness,
    sample_gradient_dense,
    sample_loss,
    smoothness_constant,
    sparse_svrg_estimator
)


def small_problem(regularizer='sparse', seed=0, mu=1e-2):
    return Problem.build(gen_random_sparse(40, 15, 0.3, seed=seed), mu, 'safe', regularizer)


class TestProblem(unittest.TestCase):
    """Construction and smoothness constants."""

    def test_negative_mu_rejected(self):
        with self.assertRaises(ValueError):
            small_problem(mu=-1.0)

    def test_data_without_entries_rejected(self):
        with self.assertRaises(DatasetFormatError):
            Problem.build(parse_libsvm("+1\n-1\n", d=4), 1e-2)

    def test_unknown_regularizer_rejected(self):
        with self.assertRaises(ValueError):
            small_problem(regularizer='weird')

    def test_sparse_regularizer_weights(self):
        p = small_problem()
        np.testing.assert_array_equal(p.reg, p.mu * p.profile.d_diag)
        dense = p.with_regularizer('dense')
        np.testing.assert_array_equal(dense.reg, np.full(p.d, p.mu))

    def test_identity_design_smoothness(self):
        """Row i = e_i: L_i = 1/4 + mu n under the safe sparse constant."""
        p = Problem.build(gen_synthetic(50, seed=0), 1e-3)
        np.testing.assert_allclose(per_sample_smoothness(p), np.full(50, 0.25 + 1e-3 * 50))
        self.assertAlmostEqual(p.L, 0.25 + 1e-3 * 50)
        self.assertAlmostEqual(p.kappa, p.L / 1e-3)

    def test_nominal_smoothness(self):
        p = Problem.build(gen_synthetic(50, seed=0), 1e-3, 'nominal')
        self.assertAlmostEqual(p.L, 0.25 + 1e-3)

    def test_smoothness_override(self):
        p = Problem.build(gen_synthetic(10, seed=0), 1e-3, 2.0)
        self.assertEqual(p.L, 2.0)
        with self.assertRaises(ValueError):
            smoothness_constant(p.dataset, p.profile, 1.0, 0.5)

    def test_safe_constant_bounds_per_sample(self):
        p = small_problem()
        self.assertLessEqual(per_sample_smoothness(p).max(), p.L)


class TestLossAndGradient(unittest.TestCase):
    """loss_value, full_gradient and the per-sample oracles."""

    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_loss_at_origin(self):
        p = small_problem()
        self.assertAlmostEqual(loss_value(p, np.zeros(p.d)), math.log(2.0), places=14)

    def test_loss_is_mean_of_sample_losses(self):
        for regularizer in ('sparse', 'dense'):
            p = small_problem(regularizer)
            x = self.rng.standard_normal(p.d)
            mean = np.mean([sample_loss(p, i, x) for i in range(p.n)])
            self.assertAlmostEqual(loss_value(p, x), mean, places=12)

    def test_gradient_is_mean_of_sample_gradients(self):
        for regularizer in ('sparse', 'dense'):
            p = small_problem(regularizer)
            x = self.rng.standard_normal(p.d)
            mean = np.mean([sample_gradient_dense(p, i, x) for i in range(p.n)], axis=0)
            np.testing.assert_allclose(full_gradient(p, x), mean, rtol=1e-12, atol=1e-13)

    def test_gradient_matches_finite_differences(self):
        p = small_problem()
        x = self.rng.standard_normal(p.d)
        g = full_gradient(p, x)
        h = 1e-6
        for v in range(p.d):
            e = np.zeros(p.d)
            e[v] = h
            fd = (loss_value(p, x + e) - loss_value(p, x - e)) / (2 * h)
            self.assertAlmostEqual(g[v], fd, places=7)

    def test_partial_gradient_on_support(self):
        p = small_problem()
        x = self.rng.standard_normal(p.d)
        for i in range(5):
            support, _ = p.dataset.row(i)
            sg = partial_gradient(p, i, x[support])
            np.testing.assert_allclose(sg.to_dense(p.d), sample_gradient_dense(p, i, x), rtol=1e-14, atol=1e-15)

    def test_dimension_errors(self):
        p = small_problem()
        with self.assertRaises(DimensionError):
            loss_value(p, np.zeros(p.d + 1))
        with self.assertRaises(DimensionError):
            partial_gradient(p, 0, np.zeros(p.d + 3))

    def test_threaded_gradient_matches(self):
        p = small_problem()
        x = self.rng.standard_normal(p.d)
        g1, lp1 = gradient_and_derivatives(p, x)
        with ThreadPoolExecutor(max_workers=3) as pool:
            g3, lp3 = gradient_and_derivatives(p, x, workers=3, executor=pool)
        np.testing.assert_allclose(g3, g1, rtol=1e-12, atol=1e-15)
        np.testing.assert_array_equal(lp3, lp1)

    def test_partition_bounds(self):
        self.assertEqual(partition_bounds(5, 3), [(0, 1), (1, 3), (3, 5)])
        self.assertEqual(partition_bounds(2, 4), [(0, 0), (0, 1), (1, 1), (1, 2)])
        with self.assertRaises(ValueError):
            partition_bounds(5, 0)


class TestSparseEstimator(unittest.TestCase):
    """Test cases for the sparse SVRG estimator and its snapshot."""

    def setUp(self):
        self.p = small_problem(seed=3)
        self.rng = np.random.default_rng(5)
        self.x_snap = self.rng.standard_normal(self.p.d)
        self.snap = SnapshotContext.create(self.p, self.x_snap)

    def test_unbiased(self):
        """Mean over all samples equals grad f(y)."""
        y = self.rng.standard_normal(self.p.d)
        mean = np.asarray(estimator_matrix(self.p, y, self.snap).mean(axis=0)).ravel()
        grad = full_gradient(self.p, y)
        self.assertLessEqual(np.max(np.abs(mean - grad)), 1e-12 * max(1.0, np.max(np.abs(grad))))

    def test_rows_match_single_estimator(self):
        y = self.rng.standard_normal(self.p.d)
        G = estimator_matrix(self.p, y, self.snap).toarray()
        for i in range(0, self.p.n, 7):
            support, _ = self.p.dataset.row(i)
            est = sparse_svrg_estimator(self.p, i, y[support], self.snap)
            np.testing.assert_allclose(est.to_dense(self.p.d), G[i], rtol=1e-14, atol=1e-15)

    def test_at_snapshot_is_reweighted_gradient(self):
        """With y = x_snap only the D_i g term is left."""
        support, _ = self.p.dataset.row(2)
        est = sparse_svrg_estimator(self.p, 2, self.x_snap[support], self.snap)
        np.testing.assert_allclose(est.values, self.snap.dg[support], rtol=1e-12, atol=1e-14)

    def test_stale_snapshot(self):
        moved = self.snap.advance(self.x_snap + 1.0)
        self.assertTrue(moved.is_stale())
        support, _ = self.p.dataset.row(0)
        with self.assertRaises(StaleSnapshotError):
            sparse_svrg_estimator(self.p, 0, np.zeros(support.size), moved)

    def test_dense_mode_rejected(self):
        dense = self.p.with_regularizer('dense')
        snap = SnapshotContext.create(dense, self.x_snap)
        support, _ = dense.dataset.row(0)
        with self.assertRaises(ValueError):
            sparse_svrg_estimator(dense, 0, np.zeros(support.size), snap)

    def test_estimator_support(self):
        """Every estimator is supported on its sample's coordinates."""
        G = estimator_matrix(self.p, np.zeros(self.p.d), self.snap)
        np.testing.assert_array_equal(G.indptr, self.p.dataset.indptr)
        np.testing.assert_array_equal(G.indices, self.p.dataset.indices)


class TestPropertyHelpers(unittest.TestCase):

    def test_interpolation_nonnegative(self):
        p = small_problem(seed=4)
        rng = np.random.default_rng(0)
        for _ in range(10):
            margin = check_interpolation(p, rng.standard_normal(p.d), rng.standard_normal(p.d))
            self.assertGreaterEqual(margin, -1e-12)

    def test_interpolation_fails_with_tiny_constant(self):
        p = small_problem(seed=4)
        rng = np.random.default_rng(0)
        margin = check_interpolation(p, 3 * rng.standard_normal(p.d), rng.standard_normal(p.d), L=1e-3)
        self.assertLess(margin, 0.0)


class TestFStar(unittest.TestCase):
    """Test cases for estimate_fstar and FStarCache."""

    def setUp(self):
        self.temp_dir = tempfile.TemporaryDirectory()
        self.p = Problem.build(gen_random_sparse(30, 8, 0.4, seed=2), 1e-2)

    def tearDown(self):
        self.temp_dir.cleanup()

    def test_estimate_reaches_minimum(self):
        cache = FStarCache()
        result = estimate_fstar(self.p, 100.0, cache=cache)
        self.assertFalse(result.cached)
        self.assertLess(result.grad_norm, 1e-6)
        rng = np.random.default_rng(0)
        tolerance = -1e-9 * max(1.0, abs(result.f_star))
        self.assertGreaterEqual(check_quadratic_growth(self.p, result.x_star, result.x_star, result.f_star), tolerance)
        for scale in (1e-2, 1.0):
            for _ in range(5):
                x = result.x_star + scale * rng.standard_normal(self.p.d)
                self.assertGreaterEqual(check_quadratic_growth(self.p, x, result.x_star, result.f_star), tolerance)
        again = estimate_fstar(self.p, 100.0, cache=cache)
        self.assertTrue(again.cached)
        self.assertEqual(again.f_star, result.f_star)

    def test_identity_design_closed_form(self):
        """On the identity design every coordinate solves the same 1-D problem."""
        n, mu = 50, 1e-3
        p = Problem.build(gen_synthetic(n, seed=3), mu)

        # b x = s with sigmoid(-s) = n mu s, for either label
        s = optimize.bisect(lambda t: expit(-t) - n * mu * t, 0.0, 1.0 / (n * mu), xtol=1e-15)
        expected = math.log1p(math.exp(-s)) + 0.5 * mu * n * s * s

        result = estimate_fstar(p, 200.0, cache=FStarCache())
        self.assertAlmostEqual(result.f_star, expected, delta=1e-10 * max(1.0, abs(expected)))
        np.testing.assert_allclose(result.x_star * p.dataset.labels, np.full(n, s), rtol=1e-6, atol=1e-9)

    def test_cache_file_is_bit_exact(self):
        path = os.path.join(self.temp_dir.name, 'fstar.txt')
        value = 0.1 + 0.2
        FStarCache(path).store('abc', 1e-5, value)
        hit = FStarCache(path).lookup('abc', 1e-5)
        self.assertIsNotNone(hit)
        self.assertEqual(hit.f_star, value)
        self.assertIsNone(FStarCache(path).lookup('abc', 1e-6))

    def test_malformed_cache_lines_skipped(self):
        path = os.path.join(self.temp_dir.name, 'fstar.txt')
        with open(path, 'w') as f:
            f.write("garbage\nkey 0.5 0.25\n")
        self.assertEqual(FStarCache(path).lookup('key', 0.5).f_star, 0.25)

    def test_zero_mu_rejected(self):
        p = Problem.build(parse_libsvm("+1 1:1\n-1 2:1\n"), 0.0)
        with self.assertRaises(ValueError):
            estimate_fstar(p, 10.0, cache=FStarCache())

    def test_cache_key_uses_dataset_hash(self):
        cache = FStarCache()
        cache.store(dataset_hash(self.p.dataset), self.p.mu, -1.0)
        self.assertEqual(estimate_fstar(self.p, 10.0, cache=cache).f_star, -1.0)


if __name__ == '__main__':
    unittest.main()
