"""
Unit tests for the serial solvers: schedule parameters, the restart driver,
SS-Acc-SVRG, sparse SVRG and sparse SAGA.

@version 0.1.0
@date October 2026
"""

import unittest
import math
import os

import numpy as np

import sys
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from dataset_io import gen_random_sparse
from glm_objective import FStarCache, Problem, estimate_fstar, full_gradient, loss_value
from serial_solvers import (
    TRACE_COLUMNS,
    Budget,
    DivergenceError,
    EpochMethod,
    SagaMemory,
    SolverParams,
    derive_params_serial,
    epochs_for_theta,
    omega_complexity_factor,
    params_for_problem,
    restart_count,
    rng_for,
    run_svrg_family,
    saga_serial,
    ss_acc_svrg,
    svrg_serial
)


def small_problem(seed=0):
    return Problem.build(gen_random_sparse(40, 15, 0.3, seed=seed), 1e-2)


class TestScheduleParameters(unittest.TestCase):
    """derive_params_serial and the complexity helpers."""

    def test_serial_schedule(self):
        params = derive_params_serial(100, 1e4, omega=50.0)
        m = 200
        theta = math.sqrt(m) / (math.sqrt(1e4) + math.sqrt(m))
        self.assertEqual(params.m, m)
        self.assertAlmostEqual(params.theta, theta, places=15)
        self.assertAlmostEqual(params.phi, 1.0 - theta, places=15)
        self.assertAlmostEqual(params.eta, (1.0 - theta) / theta, places=12)
        self.assertEqual(params.S, math.ceil(100.0 * math.sqrt(1e4 / m)))

    def test_m_override_and_smoothness(self):
        params = derive_params_serial(10, 100.0, m_override=7, L=2.0)
        self.assertEqual(params.m, 7)
        self.assertAlmostEqual(params.phi, (1.0 - params.theta) / 2.0)
        self.assertAlmostEqual(params.mu, 2.0 / 100.0)

    def test_invalid_inputs(self):
        with self.assertRaises(ValueError):
            derive_params_serial(10, 0.5)
        with self.assertRaises(ValueError):
            derive_params_serial(10, 100.0, omega=1.0)
        with self.assertRaises(ValueError):
            derive_params_serial(0, 100.0)
        with self.assertRaises(ValueError):
            derive_params_serial(10, float('inf'))

    def test_restart_count(self):
        self.assertEqual(restart_count(2.0, 1.0, 1e-3), 10)
        self.assertEqual(restart_count(50.0, 1e-4, 1e-3), 0)
        with self.assertRaises(ValueError):
            restart_count(1.0, 1.0, 1e-3)

    def test_epochs_for_optimal_theta_match_schedule(self):
        params = derive_params_serial(100, 1e4, omega=5.0)
        self.assertLessEqual(abs(epochs_for_theta(params.theta, 1e4, params.m, 5.0) - params.S), 1)

    def test_omega_complexity_factor(self):
        value = omega_complexity_factor(math.e, 400.0, 100)
        self.assertAlmostEqual(value, math.ceil(2.0 * math.e * 2.0))

    def test_plain_svrg_schedule(self):
        params = SolverParams.plain_svrg(20, 0.1, 1.0, 0.01)
        self.assertEqual((params.theta, params.phi, params.S), (1.0, 0.0, None))
        with self.assertRaises(ValueError):
            SolverParams.plain_svrg(20, -0.1, 1.0, 0.01)


class TestBudgetAndStreams(unittest.TestCase):

    def test_budget_needs_a_rule(self):
        with self.assertRaises(ValueError):
            Budget(max_passes=None)
        with self.assertRaises(ValueError):
            Budget(max_passes=-1.0)
        Budget(max_passes=None, target_suboptimality=1e-6)

    def test_named_streams(self):
        a = rng_for(3, 0, 1, 2).integers(0, 1000, size=5)
        b = rng_for(3, 0, 1, 2).integers(0, 1000, size=5)
        c = rng_for(3, 0, 1, 3).integers(0, 1000, size=5)
        np.testing.assert_array_equal(a, b)
        self.assertFalse(np.array_equal(a, c))


class FixedSnapshots(EpochMethod):
    """Epoch e of every restart returns the constant vector e + 1."""

    passes_per_epoch = 1.0

    def __init__(self, d):
        self.d = d
        self.starts = []
        self.closed = False

    def start_restart(self, x_r):
        self.starts.append(np.array(x_r))

    def run_epoch(self, restart, epoch):
        return np.full(self.d, float(epoch + 1))

    def close(self):
        self.closed = True


class TestRestartDriver(unittest.TestCase):
    """Test cases for run_svrg_family."""

    def setUp(self):
        self.p = small_problem()

    def test_restart_point_is_snapshot_average(self):
        method = FixedSnapshots(self.p.d)
        result = run_svrg_family(self.p, method, Budget(max_passes=None, max_restarts=2), epochs_per_restart=3)
        np.testing.assert_array_equal(method.starts[0], np.zeros(self.p.d))
        np.testing.assert_array_equal(method.starts[1], np.full(self.p.d, 2.0))
        np.testing.assert_array_equal(result.x, np.full(self.p.d, 2.0))
        self.assertEqual(len(result.restart_suboptimality), 3)
        self.assertEqual(result.info['stopped_by'], 'max_restarts')
        self.assertTrue(method.closed)

    def test_budget_output_is_last_snapshot(self):
        method = FixedSnapshots(self.p.d)
        result = run_svrg_family(self.p, method, Budget(max_passes=2.0), epochs_per_restart=5)
        np.testing.assert_array_equal(result.x, np.full(self.p.d, 2.0))
        self.assertEqual([r.effective_passes for r in result.trace], [0.0, 1.0, 2.0])
        self.assertEqual(result.info['stopped_by'], 'budget')

    def test_zero_budget_returns_start(self):
        x0 = np.ones(self.p.d)
        result = run_svrg_family(self.p, FixedSnapshots(self.p.d), Budget(max_passes=0.0), x0=x0)
        self.assertEqual(len(result.trace), 1)
        np.testing.assert_array_equal(result.x, x0)

    def test_trace_row(self):
        result = run_svrg_family(self.p, FixedSnapshots(self.p.d), Budget(max_passes=1.0))
        self.assertEqual(tuple(result.trace[0].as_row()), TRACE_COLUMNS)
        self.assertAlmostEqual(result.trace[0].suboptimality, loss_value(self.p, np.zeros(self.p.d)))


class TestSSAccSVRG(unittest.TestCase):
    """Test cases for the serial accelerated solver."""

    @classmethod
    def setUpClass(cls):
        cls.p = small_problem(seed=1)
        cls.f_star = estimate_fstar(cls.p, 150.0, cache=FStarCache()).f_star

    def test_converges(self):
        params = params_for_problem(self.p, seed=0)
        result = ss_acc_svrg(self.p, params, Budget(max_passes=100.0), f_star=self.f_star)
        self.assertLess(result.final_suboptimality, 1e-2 * result.trace[0].suboptimality)
        per_epoch = (self.p.n + 2.0 * params.m) / self.p.n
        self.assertAlmostEqual(result.trace[1].effective_passes, per_epoch)

    def test_same_seed_same_trajectory(self):
        params = params_for_problem(self.p, seed=4)
        first = ss_acc_svrg(self.p, params, Budget(max_passes=20.0), f_star=self.f_star)
        second = ss_acc_svrg(self.p, params, Budget(max_passes=20.0), f_star=self.f_star)
        np.testing.assert_array_equal(first.x, second.x)
        self.assertEqual([r.suboptimality for r in first.trace], [r.suboptimality for r in second.trace])

    def test_target_stops_run(self):
        params = params_for_problem(self.p)
        target = 1e-1 * (loss_value(self.p, np.zeros(self.p.d)) - self.f_star)
        result = ss_acc_svrg(self.p, params, Budget(max_passes=200.0, target_suboptimality=target),
                             f_star=self.f_star)
        self.assertLessEqual(result.final_suboptimality, target)
        self.assertEqual(result.passes_to(target), result.trace[-1].effective_passes)

    def test_restarts_contract(self):
        params = params_for_problem(self.p, omega=2.0)
        result = ss_acc_svrg(self.p, params, Budget(max_passes=None, max_restarts=2), f_star=self.f_star)
        self.assertEqual(result.info['restarts'], 2)
        self.assertEqual(result.info['epochs'], 2 * params.S)
        self.assertLess(result.restart_suboptimality[2], result.restart_suboptimality[0])

    def test_ablation_and_average_snapshot(self):
        params = params_for_problem(self.p)
        ablation = ss_acc_svrg(self.p, params, Budget(max_passes=20.0), correction=False)
        self.assertEqual(ablation.info['params']['phi'], 0.0)
        averaged = ss_acc_svrg(self.p, params, Budget(max_passes=20.0), snapshot='average')
        self.assertTrue(np.all(np.isfinite(averaged.x)))
        with self.assertRaises(ValueError):
            ss_acc_svrg(self.p, params, Budget(max_passes=5.0), snapshot='median')

    def test_dense_regularizer_rejected(self):
        dense = self.p.with_regularizer('dense')
        with self.assertRaises(ValueError):
            ss_acc_svrg(dense, params_for_problem(self.p), Budget(max_passes=5.0))


class TestSVRGAndSAGA(unittest.TestCase):
    """Test cases for the sparse SVRG and SAGA baselines."""

    def setUp(self):
        self.p = small_problem(seed=2)

    def test_svrg_decreases(self):
        result = svrg_serial(self.p, budget=Budget(max_passes=30.0))
        self.assertLess(result.final_suboptimality, result.trace[0].suboptimality)
        self.assertAlmostEqual(result.info['params']['eta'], 1.0 / (4.0 * self.p.L))

    def test_svrg_zero_step_keeps_iterates(self):
        x0 = np.random.default_rng(1).standard_normal(self.p.d)
        result = svrg_serial(self.p, step=0.0, budget=Budget(max_passes=10.0), x0=x0)
        np.testing.assert_array_equal(result.x, x0)
        self.assertEqual(len({r.suboptimality for r in result.trace}), 1)

    def test_svrg_divergence(self):
        with self.assertRaises(DivergenceError) as context:
            svrg_serial(self.p, step=1e4 / self.p.L, budget=Budget(max_passes=200.0))
        self.assertGreater(context.exception.epoch, 0)

    def test_saga_pass_accounting(self):
        result = saga_serial(self.p, budget=Budget(max_passes=6.0))
        passes = [r.effective_passes for r in result.trace]
        self.assertEqual(passes[:3], [0.0, 2.0, 3.0])
        self.assertEqual(result.info['segments'], 5)
        self.assertLess(result.final_suboptimality, result.trace[0].suboptimality)

    def test_saga_directions_unbiased(self):
        rng = np.random.default_rng(0)
        state = SagaMemory.initialize(self.p, rng.standard_normal(self.p.d))
        x = rng.standard_normal(self.p.d)
        mean = np.asarray(state.direction_matrix(self.p, x).mean(axis=0)).ravel()
        np.testing.assert_allclose(mean, full_gradient(self.p, x), rtol=1e-10, atol=1e-12)

    def test_saga_is_seeded(self):
        first = saga_serial(self.p, budget=Budget(max_passes=4.0), seed=3)
        second = saga_serial(self.p, budget=Budget(max_passes=4.0), seed=3)
        np.testing.assert_array_equal(first.x, second.x)


if __name__ == '__main__':
    unittest.main()
