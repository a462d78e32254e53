"""
Lagged Update Baselines

Accelerated variance-reduced solvers for the dense-regularizer problem
(f_i carries the full (mu/2)||x||^2), made sparse per iteration with lagged
("just in time") updates: every coordinate evolves under a fixed linear
recurrence between the iterations that touch it, so its state is caught up
with precomputed matrix powers right before it is read.

Two methods are provided:

- ss_acc_svrg_lagged: the accelerated SVRG epoch with D = I. The snapshot is
  the average of the inner coupled points (a random inner iterate would need
  every coordinate at one time point).
- katyusha_lagged: Katyusha with its geometrically weighted snapshot.

The eager dense references (dense_reference) run the same iterations one full
dense vector at a time and serve as oracles.

@version 0.1.0
@date October 2026
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
from numba import njit

from glm_objective import Problem, gradient_and_derivatives, logistic_derivatives
from kernels import logistic_derivative
from serial_solvers import (DEFAULT_OMEGA, Budget, EpochMethod, SolverParams, SolverResult,
                            TraceRecord, derive_params_serial, rng_for, run_svrg_family)

logger = logging.getLogger(__name__)

LAGGED_METHODS = ('ss_acc_svrg', 'katyusha')


@dataclass(frozen=True)
class KatyushaParams:
    """Katyusha momentum weights and step sizes."""

    m: int
    tau1: float
    tau2: float
    alpha: float
    L: float
    mu: float

    @property
    def beta(self) -> float:
        return 1.0 - self.tau1 - self.tau2

    @property
    def q(self) -> float:
        return self.mu / (3.0 * self.L)

    @property
    def w(self) -> float:
        return 1.0 + self.alpha * self.mu

    def snapshot_scale(self) -> float:
        """w^{m-1} / sum_{j<m} w^j, computed as 1 / sum_{j<m} w^{-j}."""
        return 1.0 / float(np.sum(self.w ** -np.arange(self.m, dtype=np.float64)))


def katyusha_params(m: int, kappa: float, L: float) -> KatyushaParams:
    """tau2 = 1/2, tau1 = min(sqrt(m / (3 kappa)), 1/2), alpha = 1 / (3 tau1 L)."""
    if not kappa >= 1.0 or math.isinf(kappa):
        raise ValueError(f"kappa must be finite and at least 1, got {kappa}")
    tau1 = min(math.sqrt(m / (3.0 * kappa)), 0.5)
    return KatyushaParams(m=m, tau1=tau1, tau2=0.5, alpha=1.0 / (3.0 * tau1 * L), L=L, mu=L / kappa)


class LinearRecurrence:
    """
    Per-coordinate recurrence s' = M s + N u (+ coef a_v e on touched coordinates)
    with query point c.s + h.u, where u = (x_snap_v, g_snap_v).

    P[j] = M^j and R[j] = sum_{i<j} M^i N, so j untouched steps are
    s <- P[j] s + R[j] u.
    """

    def __init__(self, M, N, e, c, h, horizon: int):
        self.M = np.asarray(M, dtype=np.float64)
        self.N = np.asarray(N, dtype=np.float64)
        self.e = np.asarray(e, dtype=np.float64)
        self.c = np.asarray(c, dtype=np.float64)
        self.h = np.asarray(h, dtype=np.float64)
        k = self.M.shape[0]
        if self.M.shape != (k, k) or self.N.shape != (k, 2) or self.e.shape != (k,) \
                or self.c.shape != (k,) or self.h.shape != (2,):
            raise ValueError("Inconsistent recurrence shapes")
        self.P = np.empty((horizon + 1, k, k))
        self.R = np.empty((horizon + 1, k, 2))
        self.P[0] = np.eye(k)
        self.R[0] = 0.0
        for j in range(horizon):
            self.P[j + 1] = self.M @ self.P[j]
            self.R[j + 1] = self.M @ self.R[j] + self.N

    @property
    def size(self) -> int:
        return self.M.shape[0]

    @classmethod
    def acc_svrg(cls, params: SolverParams, mu: float, horizon: int) -> 'LinearRecurrence':
        """State (z, sum of y) for the accelerated SVRG epoch with D = I."""
        theta, phi, eta = params.theta, params.phi, params.eta
        M = [[1.0 - eta * mu * theta, 0.0], [theta, 1.0]]
        N = [[eta * mu * theta, -eta * (1.0 - mu * phi)], [1.0 - theta, -phi]]
        return cls(M, N, e=[-eta, 0.0], c=[theta, 0.0], h=[1.0 - theta, -phi], horizon=horizon)

    @classmethod
    def katyusha(cls, kp: KatyushaParams, horizon: int) -> 'LinearRecurrence':
        """State (y, z, weighted sum of y) for Katyusha."""
        q, beta, tau1, tau2 = kp.q, kp.beta, kp.tau1, kp.tau2
        am = kp.alpha * kp.mu
        inv3L = 1.0 / (3.0 * kp.L)
        y_row = [(1.0 - q) * beta, (1.0 - q) * tau1, 0.0]
        M = [y_row, [-am * beta, 1.0 - am * tau1, 0.0], [y_row[0], y_row[1], 1.0 / kp.w]]
        y_in = [(1.0 - q) * tau2 + q, -inv3L]
        N = [y_in, [am * (1.0 - tau2), -kp.alpha], y_in]
        return cls(M, N, e=[-inv3L, -kp.alpha, -inv3L], c=[beta, tau1, 0.0], h=[tau2, 0.0],
                   horizon=horizon)


@njit(nogil=True, cache=True)
def _catch_up(state, v, lag, P, R, x_v, g_v, scratch):
    if lag == 0:
        return
    k = state.shape[1]
    for a in range(k):
        acc = R[lag, a, 0] * x_v + R[lag, a, 1] * g_v
        for b in range(k):
            acc += P[lag, a, b] * state[v, b]
        scratch[a] = acc
    for a in range(k):
        state[v, a] = scratch[a]


@njit(nogil=True, cache=True)
def lagged_epoch(indptr, indices, data, labels, state, last, x_snap, g_snap, lp_snap,
                 samples, P, R, M, N, e, c, h, scratch):
    """One epoch of a lagged recurrence; every coordinate is caught up to m on exit."""
    m = samples.shape[0]
    k = state.shape[1]
    for it in range(m):
        i = samples[it]
        lo = indptr[i]
        hi = indptr[i + 1]
        margin = 0.0
        for jj in range(lo, hi):
            v = indices[jj]
            _catch_up(state, v, it - last[v], P, R, x_snap[v], g_snap[v], scratch)
            last[v] = it
            q = h[0] * x_snap[v] + h[1] * g_snap[v]
            for b in range(k):
                q += c[b] * state[v, b]
            margin += data[jj] * q
        coef = logistic_derivative(margin, labels[i]) - lp_snap[i]
        for jj in range(lo, hi):
            v = indices[jj]
            ca = coef * data[jj]
            for a in range(k):
                acc = N[a, 0] * x_snap[v] + N[a, 1] * g_snap[v] + ca * e[a]
                for b in range(k):
                    acc += M[a, b] * state[v, b]
                scratch[a] = acc
            for a in range(k):
                state[v, a] = scratch[a]
            last[v] = it + 1
    for v in range(state.shape[0]):
        _catch_up(state, v, m - last[v], P, R, x_snap[v], g_snap[v], scratch)
        last[v] = m


def _require_dense(p: Problem) -> None:
    if p.regularizer != 'dense':
        raise ValueError("Lagged-update baselines require the dense regularizer mode")


class LaggedAccSVRG(EpochMethod):
    """Accelerated SVRG with D = I and averaged snapshot, lagged updates."""

    def __init__(self, p: Problem, params: SolverParams):
        _require_dense(p)
        self.p = p
        self.params = params
        self.recurrence = LinearRecurrence.acc_svrg(params, p.mu, params.m)
        self.passes_per_epoch = (p.n + 2.0 * params.m) / p.n
        self.state = np.zeros((p.d, 2))
        self.x_snap = None

    def start_restart(self, x_r: np.ndarray) -> None:
        self.x_snap = np.array(x_r, dtype=np.float64)
        self.state[:, 0] = x_r

    def run_epoch(self, restart: int, epoch: int) -> np.ndarray:
        p, params, rec = self.p, self.params, self.recurrence
        ds = p.dataset
        g, lp = gradient_and_derivatives(p, self.x_snap)
        self.state[:, 1] = 0.0
        last = np.zeros(p.d, dtype=np.int64)
        samples = rng_for(params.seed, restart, epoch, 1).integers(0, p.n, size=params.m)
        lagged_epoch(ds.indptr, ds.indices, ds.data, ds.labels, self.state, last, self.x_snap, g, lp,
                     samples, rec.P, rec.R, rec.M, rec.N, rec.e, rec.c, rec.h, np.empty(rec.size))
        self.x_snap = self.state[:, 1] / params.m
        return self.x_snap


class LaggedKatyusha(EpochMethod):
    """Katyusha with lagged updates; y and z carry over, the snapshot is the weighted average of y."""

    def __init__(self, p: Problem, kp: KatyushaParams, seed: int = 0):
        _require_dense(p)
        self.p = p
        self.kp = kp
        self.seed = seed
        self.recurrence = LinearRecurrence.katyusha(kp, kp.m)
        self.scale = kp.snapshot_scale()
        self.passes_per_epoch = (p.n + 2.0 * kp.m) / p.n
        self.state = np.zeros((p.d, 3))
        self.x_snap = None

    def start_restart(self, x_r: np.ndarray) -> None:
        self.x_snap = np.array(x_r, dtype=np.float64)
        self.state[:, 0] = x_r
        self.state[:, 1] = x_r

    def run_epoch(self, restart: int, epoch: int) -> np.ndarray:
        p, rec = self.p, self.recurrence
        ds = p.dataset
        g, lp = gradient_and_derivatives(p, self.x_snap)
        self.state[:, 2] = 0.0
        last = np.zeros(p.d, dtype=np.int64)
        samples = rng_for(self.seed, restart, epoch, 1).integers(0, p.n, size=self.kp.m)
        lagged_epoch(ds.indptr, ds.indices, ds.data, ds.labels, self.state, last, self.x_snap, g, lp,
                     samples, rec.P, rec.R, rec.M, rec.N, rec.e, rec.c, rec.h, np.empty(rec.size))
        self.x_snap = self.scale * self.state[:, 2]
        return self.x_snap


class EagerAccSVRG(EpochMethod):
    """Dense-vector accelerated SVRG epochs (snapshot 'random' or 'average')."""

    def __init__(self, p: Problem, params: SolverParams, snapshot: str = 'average'):
        _require_dense(p)
        if snapshot not in ('random', 'average'):
            raise ValueError(f"Unknown snapshot rule: {snapshot}")
        self.p = p
        self.params = params
        self.snapshot = snapshot
        self.passes_per_epoch = (p.n + 2.0 * params.m) / p.n
        self.x_snap = None
        self.z = None

    def start_restart(self, x_r: np.ndarray) -> None:
        self.x_snap = np.array(x_r, dtype=np.float64)
        self.z = np.array(x_r, dtype=np.float64)

    def run_epoch(self, restart: int, epoch: int) -> np.ndarray:
        p, params = self.p, self.params
        ds = p.dataset
        theta, phi, eta = params.theta, params.phi, params.eta
        xs = self.x_snap
        g, lp = gradient_and_derivatives(p, xs)
        t_snap = int(rng_for(params.seed, restart, epoch).integers(0, params.m)) \
            if self.snapshot == 'random' else -1
        samples = rng_for(params.seed, restart, epoch, 1).integers(0, p.n, size=params.m)
        y_sum = np.zeros(p.d)
        y_snap = None
        for k, i in enumerate(samples):
            support, a = ds.row(i)
            y = theta * self.z + (1.0 - theta) * xs - phi * g
            if k == t_snap:
                y_snap = y.copy()
            y_sum += y
            coef = logistic_derivatives(np.array([a @ y[support]]), ds.labels[i:i + 1])[0] - lp[i]
            G = np.zeros(p.d)
            G[support] = coef * a
            G = G + p.reg * (y - xs) + g
            self.z = self.z + (-eta * G)
        self.x_snap = y_sum / params.m if y_snap is None else y_snap
        return self.x_snap


class EagerKatyusha(EpochMethod):
    """Dense-vector Katyusha epochs."""

    def __init__(self, p: Problem, kp: KatyushaParams, seed: int = 0):
        _require_dense(p)
        self.p = p
        self.kp = kp
        self.seed = seed
        self.scale = kp.snapshot_scale()
        self.passes_per_epoch = (p.n + 2.0 * kp.m) / p.n
        self.x_snap = self.y = self.z = None

    def start_restart(self, x_r: np.ndarray) -> None:
        self.x_snap = np.array(x_r, dtype=np.float64)
        self.y = self.x_snap.copy()
        self.z = self.x_snap.copy()

    def run_epoch(self, restart: int, epoch: int) -> np.ndarray:
        p, kp = self.p, self.kp
        ds = p.dataset
        xs = self.x_snap
        g, lp = gradient_and_derivatives(p, xs)
        samples = rng_for(self.seed, restart, epoch, 1).integers(0, p.n, size=kp.m)
        acc = np.zeros(p.d)
        for i in samples:
            support, a = ds.row(i)
            x = kp.tau1 * self.z + kp.tau2 * xs + kp.beta * self.y
            coef = logistic_derivatives(np.array([a @ x[support]]), ds.labels[i:i + 1])[0] - lp[i]
            G = p.mu * (x - xs) + g
            G[support] += coef * a
            self.y = x - G / (3.0 * kp.L)
            self.z = self.z - kp.alpha * G
            acc = acc / kp.w + self.y
        self.x_snap = self.scale * acc
        return self.x_snap


def _build_method(p: Problem, which: str, eager: bool, seed: int, omega: float,
                  m_override: Optional[int], snapshot: str, params: Optional[SolverParams]):
    if which not in LAGGED_METHODS:
        raise ValueError(f"Unknown lagged method: {which}")
    m = m_override if m_override is not None else 2 * p.n
    if which == 'katyusha':
        kp = katyusha_params(m, p.kappa, p.L)
        method = EagerKatyusha(p, kp, seed) if eager else LaggedKatyusha(p, kp, seed)
        return method, None, asdict(kp)
    if params is None:
        params = derive_params_serial(p.n, p.kappa, omega, m_override=m, L=p.L, seed=seed)
    method = EagerAccSVRG(p, params, snapshot) if eager else LaggedAccSVRG(p, params)
    return method, params.S, asdict(params)


def lagged_update_baselines(p: Problem, which: str, budget: Budget, seed: int = 0,
                            f_star: float = 0.0, x0: Optional[np.ndarray] = None,
                            callback: Optional[Callable[[TraceRecord, np.ndarray], None]] = None,
                            omega: float = DEFAULT_OMEGA, m_override: Optional[int] = None,
                            params: Optional[SolverParams] = None) -> SolverResult:
    """
    Run 'katyusha' or 'ss_acc_svrg' (D = I, averaged snapshot) with lagged updates.

    Raises:
        ValueError: if the problem is not in dense regularizer mode or which is unknown
    """
    _require_dense(p)
    method, epochs_per_restart, info = _build_method(p, which, False, seed, omega, m_override,
                                                     'average', params)
    label = f"{which}_lagged"
    logger.info(f"{label}: {info}")
    result = run_svrg_family(p, method, budget, f_star=f_star, epochs_per_restart=epochs_per_restart,
                             x0=x0, callback=callback, label=label)
    result.info['params'] = info
    return result


def dense_reference(p: Problem, which: str, budget: Budget, seed: int = 0, snapshot: str = 'average',
                    f_star: float = 0.0, x0: Optional[np.ndarray] = None,
                    omega: float = DEFAULT_OMEGA, m_override: Optional[int] = None,
                    params: Optional[SolverParams] = None) -> SolverResult:
    """Eager dense counterpart of lagged_update_baselines with the same random streams."""
    _require_dense(p)
    method, epochs_per_restart, info = _build_method(p, which, True, seed, omega, m_override,
                                                     snapshot, params)
    result = run_svrg_family(p, method, budget, f_star=f_star, epochs_per_restart=epochs_per_restart,
                             x0=x0, label=f"{which}_eager")
    result.info['params'] = info
    return result
