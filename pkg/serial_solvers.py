"""
Serial Solvers Module

Single-threaded solvers for the sparsified logistic regression problem:

- SS-Acc-SVRG: accelerated SVRG with sparse coupling, sparse variance
  correction and the restart framework (x_{r+1} is the average of the epoch
  snapshots of restart r).
- sparse SVRG (the same epoch with theta = 1, phi = 0)
- sparse SAGA with a scalar memory per sample

The restart/epoch driver, trace recording, budget and divergence handling in
this module are shared with the lagged-update baselines and the asynchronous
engine.

@version 0.1.0
@date October 2026
"""

import logging
import math
import time
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy import sparse

from glm_objective import Problem, gradient_and_derivatives, logistic_derivatives, loss_value
from kernels import acc_svrg_epoch, accumulate_gradient, saga_segment

logger = logging.getLogger(__name__)

DEFAULT_OMEGA = 50.0
DIVERGENCE_FACTOR = 1e6
TRACE_COLUMNS = ('restart', 'epoch', 'effective_passes', 'wall_time_s', 'suboptimality')


class DivergenceError(RuntimeError):
    """Raised when suboptimality blows past the divergence threshold."""

    def __init__(self, restart: int, epoch: int, suboptimality: float, initial: float):
        super().__init__(f"Diverged at restart {restart}, epoch {epoch}: suboptimality "
                         f"{suboptimality:.3e} vs initial {initial:.3e}")
        self.restart = restart
        self.epoch = epoch
        self.suboptimality = suboptimality
        self.initial = initial


@dataclass(frozen=True)
class SolverParams:
    """Scalars of the accelerated schedule (serial or asynchronous)."""

    m: int
    omega: float
    theta: float
    phi: float
    eta: float
    S: Optional[int]
    L: float
    mu: float
    kappa: float
    R: Optional[int] = None
    tau_tilde: float = 0.0
    async_factor: float = 1.0
    seed: int = 0

    def validate(self) -> 'SolverParams':
        """Check the accelerated-schedule invariants."""
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must be in (0, 1), got {self.theta}")
        if self.eta <= 0.0 or self.phi < 0.0:
            raise ValueError(f"eta must be positive and phi nonnegative, got eta={self.eta}, phi={self.phi}")
        if self.S is not None and self.S < 1:
            raise ValueError(f"S must be at least 1, got {self.S}")
        if self.omega <= 1.0:
            raise ValueError(f"omega must be greater than 1, got {self.omega}")
        if self.m < 1:
            raise ValueError(f"Epoch length must be positive, got {self.m}")
        return self

    @classmethod
    def plain_svrg(cls, m: int, eta: float, L: float, mu: float, seed: int = 0) -> 'SolverParams':
        """Degenerate schedule theta = 1, phi = 0: sparse SVRG without restarts."""
        if eta < 0.0:
            raise ValueError(f"Step size must be nonnegative, got {eta}")
        kappa = L / mu if mu > 0.0 else float('inf')
        return cls(m=m, omega=float('inf'), theta=1.0, phi=0.0, eta=eta, S=None,
                   L=L, mu=mu, kappa=kappa, seed=seed)


@dataclass(frozen=True)
class TraceRecord:
    """One row of a convergence trace."""

    restart: int
    epoch: int
    effective_passes: float
    wall_time: float
    suboptimality: float

    def as_row(self) -> Dict[str, float]:
        return dict(zip(TRACE_COLUMNS, (self.restart, self.epoch, self.effective_passes,
                                        self.wall_time, self.suboptimality)))


@dataclass(frozen=True)
class Budget:
    """Stopping rules, checked at epoch boundaries."""

    max_passes: Optional[float] = 50.0
    target_suboptimality: Optional[float] = None
    max_restarts: Optional[int] = None

    def __post_init__(self):
        if self.max_passes is None and self.target_suboptimality is None and self.max_restarts is None:
            raise ValueError("Budget needs at least one of max_passes, target_suboptimality, max_restarts")
        if self.max_passes is not None and self.max_passes < 0:
            raise ValueError(f"max_passes must be nonnegative, got {self.max_passes}")


@dataclass
class SolverResult:
    """Output point, trace and per-restart suboptimality of a run."""

    x: np.ndarray
    trace: List[TraceRecord]
    restart_suboptimality: List[float] = field(default_factory=list)
    info: Dict = field(default_factory=dict)

    @property
    def final_suboptimality(self) -> float:
        return self.trace[-1].suboptimality

    def passes_to(self, target: float) -> Optional[float]:
        """Effective passes at the first trace point at or below target."""
        for record in self.trace:
            if record.suboptimality <= target:
                return record.effective_passes
        return None

    def time_to(self, target: float) -> Optional[float]:
        for record in self.trace:
            if record.suboptimality <= target:
                return record.wall_time
        return None


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """
    Named stream of the seeded generator.

    (seed, r, s) draws the snapshot index of epoch s of restart r;
    (seed, r, s, w + 1) draws the samples of worker w (the serial solvers are worker 0).
    """
    return np.random.default_rng([seed, *keys])


def derive_params_serial(n: int, kappa: float, omega: float = DEFAULT_OMEGA,
                         m_override: Optional[int] = None, L: float = 1.0,
                         seed: int = 0) -> SolverParams:
    """
    Accelerated schedule: m = 2n, theta = sqrt(m) / (sqrt(kappa) + sqrt(m)),
    phi = (1 - theta) / L, eta = (1 - theta) / (L theta), S = ceil(2 omega sqrt(kappa / m)).
    """
    return schedule_params(n, kappa, omega, 1.0, 0.0, m_override, L, seed)


def schedule_params(n: int, kappa: float, omega: float, async_factor: float, tau_tilde: float,
                   m_override: Optional[int], L: float, seed: int) -> SolverParams:
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if not kappa >= 1.0 or math.isinf(kappa):
        raise ValueError(f"kappa must be finite and at least 1, got {kappa}")
    if omega <= 1.0:
        raise ValueError(f"omega must be greater than 1, got {omega}")
    m = int(m_override) if m_override is not None else 2 * n
    if m < 1:
        raise ValueError(f"Epoch length must be positive, got {m}")

    root_m = math.sqrt(m)
    theta = root_m / (math.sqrt(kappa * async_factor) + root_m)
    phi = (1.0 - theta) / L
    eta = (1.0 - theta) / (L * theta * async_factor)
    S = math.ceil(2.0 * omega * math.sqrt(kappa * async_factor / m))
    params = SolverParams(m=m, omega=omega, theta=theta, phi=phi, eta=eta, S=max(S, 1), L=L,
                          mu=L / kappa, kappa=kappa, tau_tilde=tau_tilde,
                          async_factor=async_factor, seed=seed)
    return params.validate()


def params_for_problem(p: Problem, omega: float = DEFAULT_OMEGA, m_override: Optional[int] = None,
                       seed: int = 0) -> SolverParams:
    """Serial schedule for a built problem (kappa = L / mu)."""
    return derive_params_serial(p.n, p.kappa, omega, m_override=m_override, L=p.L, seed=seed)


def restart_count(omega: float, initial_gap: float, epsilon: float) -> int:
    """R = ceil(log(initial_gap / epsilon) / log(omega)) restarts for an epsilon-accurate output."""
    if omega <= 1.0:
        raise ValueError(f"omega must be greater than 1, got {omega}")
    if initial_gap <= epsilon:
        return 0
    return math.ceil(math.log(initial_gap / epsilon) / math.log(omega))


def epochs_for_theta(theta: float, kappa: float, m: int, omega: float, async_factor: float = 1.0) -> int:
    """Restart period for an arbitrary theta: ceil(omega ((1 - theta)/theta + kappa theta A / (m (1 - theta))))."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must be in (0, 1), got {theta}")
    value = omega * ((1.0 - theta) / theta + kappa * theta * async_factor / (m * (1.0 - theta)))
    return math.ceil(value)


def omega_complexity_factor(omega: float, kappa: float, m: int) -> float:
    """Explicit omega dependence of the serial complexity: ceil(2 omega sqrt(kappa/m)) / log(omega)."""
    return math.ceil(2.0 * omega * math.sqrt(kappa / m)) / math.log(omega)


class TraceRecorder:
    """Collects trace rows, times the solver (objective evaluation excluded) and checks the budget."""

    def __init__(self, p: Problem, f_star: float, budget: Budget,
                 divergence_factor: float = DIVERGENCE_FACTOR,
                 callback: Optional[Callable[[TraceRecord, np.ndarray], None]] = None):
        self.p = p
        self.f_star = f_star
        self.budget = budget
        self.divergence_factor = divergence_factor
        self.callback = callback
        self.records: List[TraceRecord] = []
        self.initial = None
        self._elapsed = 0.0
        self._resumed = None

    def suboptimality(self, x: np.ndarray) -> float:
        return loss_value(self.p, x) - self.f_star

    def start(self, x0: np.ndarray) -> float:
        self.initial = self.suboptimality(x0)
        record = TraceRecord(0, 0, 0.0, 0.0, self.initial)
        self.records.append(record)
        if self.callback is not None:
            self.callback(record, x0)
        self._resumed = time.perf_counter()
        return self.initial

    def record(self, restart: int, epoch: int, passes: float, x: np.ndarray) -> bool:
        """Append a row for x; returns True when the budget says stop."""
        self._elapsed += time.perf_counter() - self._resumed
        value = self.suboptimality(x)
        record = TraceRecord(restart, epoch, passes, self._elapsed, value)
        self.records.append(record)
        logger.debug(f"restart={restart} epoch={epoch} passes={passes:.2f} subopt={value:.3e}")
        if self.callback is not None:
            self.callback(record, x)

        if not np.isfinite(value) or value > self.divergence_factor * max(abs(self.initial), 1e-300):
            logger.error(f"Divergence at restart {restart}, epoch {epoch}: suboptimality {value:.3e}")
            raise DivergenceError(restart, epoch, value, self.initial)

        self._resumed = time.perf_counter()
        return self.budget_exhausted(passes, value)

    def budget_exhausted(self, passes: float, value: float) -> bool:
        if self.budget.max_passes is not None and passes >= self.budget.max_passes - 1e-9:
            return True
        target = self.budget.target_suboptimality
        return target is not None and value <= target


class EpochMethod(ABC):
    """One SVRG-type method seen by the restart driver."""

    passes_per_epoch: float = 0.0

    @abstractmethod
    def start_restart(self, x_r: np.ndarray) -> None:
        """Reset the method so that the next epoch starts from x_r."""
        pass

    @abstractmethod
    def run_epoch(self, restart: int, epoch: int) -> np.ndarray:
        """Run one epoch and return the new snapshot."""
        pass

    def close(self) -> None:
        pass


class AccSVRGEpochs(EpochMethod):
    """
    Serial sparse accelerated SVRG epochs.

    z carries over between epochs of a restart. The snapshot is y_t for the
    pre-drawn t, or the average of the inner coupled points when snapshot is
    'average'.
    """

    def __init__(self, p: Problem, params: SolverParams, snapshot: str = 'random'):
        if p.regularizer != 'sparse':
            raise ValueError("Sparse solvers require the sparse regularizer mode")
        if snapshot not in ('random', 'average'):
            raise ValueError(f"Unknown snapshot rule: {snapshot}")
        self.p = p
        self.params = params
        self.snapshot = snapshot
        self.passes_per_epoch = (p.n + 2.0 * params.m) / p.n
        self.ybuf = np.empty(max(p.dataset.max_row_nnz, 1))
        self.x_snap = None
        self.z = None

    def start_restart(self, x_r: np.ndarray) -> None:
        self.x_snap = np.array(x_r, dtype=np.float64)
        self.z = np.array(x_r, dtype=np.float64)

    def run_epoch(self, restart: int, epoch: int) -> np.ndarray:
        p, params = self.p, self.params
        ds = p.dataset
        g, lp = gradient_and_derivatives(p, self.x_snap)
        dg = p.profile.d_diag * g
        average = self.snapshot == 'average'
        t_snap = -1 if average else int(rng_for(params.seed, restart, epoch).integers(0, params.m))
        samples = rng_for(params.seed, restart, epoch, 1).integers(0, p.n, size=params.m)
        y_snap = np.empty(p.d)
        z_sum = np.zeros(p.d if average else 0)
        last_seen = np.zeros(p.d if average else 0, dtype=np.int64)

        acc_svrg_epoch(ds.indptr, ds.indices, ds.data, ds.labels, p.reg, self.z, self.x_snap, dg, lp,
                       samples, params.theta, params.phi, params.eta, t_snap, y_snap, self.ybuf,
                       average, z_sum, last_seen)

        if average:
            y_snap = params.theta * (z_sum / params.m) + (1.0 - params.theta) * self.x_snap - params.phi * dg
        self.x_snap = y_snap
        return y_snap


def run_svrg_family(p: Problem, method: EpochMethod, budget: Budget, f_star: float = 0.0,
                    epochs_per_restart: Optional[int] = None, x0: Optional[np.ndarray] = None,
                    callback: Optional[Callable[[TraceRecord, np.ndarray], None]] = None,
                    divergence_factor: float = DIVERGENCE_FACTOR, label: str = '') -> SolverResult:
    """
    Restart driver shared by the SVRG-type solvers.

    Each restart r starts the method at x_r and runs epochs_per_restart epochs
    (forever when None); x_{r+1} is the mean of the snapshots of restart r.
    When the budget stops a run the output is the last snapshot.
    """
    x_r = np.zeros(p.d) if x0 is None else np.array(x0, dtype=np.float64)
    recorder = TraceRecorder(p, f_star, budget, divergence_factor, callback)
    restart_subopt = [recorder.start(x_r)]
    passes = 0.0
    output = x_r
    stopped_by = 'max_restarts'

    if budget.max_passes is not None and budget.max_passes <= 0:
        return SolverResult(x=x_r, trace=recorder.records, restart_suboptimality=restart_subopt,
                            info={'solver': label, 'stopped_by': 'max_passes', 'epochs': 0, 'restarts': 0})

    restart = 0
    epochs = 0
    try:
        while budget.max_restarts is None or restart < budget.max_restarts:
            method.start_restart(x_r)
            snapshot_sum = np.zeros(p.d)
            epoch = 0
            stop = False
            while epochs_per_restart is None or epoch < epochs_per_restart:
                snapshot = method.run_epoch(restart, epoch)
                snapshot_sum += snapshot
                epoch += 1
                epochs += 1
                passes += method.passes_per_epoch
                output = snapshot
                if recorder.record(restart, epoch, passes, snapshot):
                    stop = True
                    break
            if stop:
                stopped_by = 'budget'
                break
            x_r = snapshot_sum / epoch
            output = x_r
            restart_subopt.append(recorder.suboptimality(x_r))
            logger.info(f"{label or 'solver'}: restart {restart} done, "
                        f"suboptimality {restart_subopt[-2]:.3e} -> {restart_subopt[-1]:.3e}")
            restart += 1
    finally:
        method.close()

    return SolverResult(x=output, trace=recorder.records, restart_suboptimality=restart_subopt,
                        info={'solver': label, 'stopped_by': stopped_by, 'epochs': epochs,
                              'restarts': restart, 'passes': passes})


def ss_acc_svrg(p: Problem, params: SolverParams, budget: Budget, f_star: float = 0.0,
                x0: Optional[np.ndarray] = None,
                callback: Optional[Callable[[TraceRecord, np.ndarray], None]] = None,
                correction: bool = True, snapshot: str = 'random') -> SolverResult:
    """
    Serial sparse accelerated SVRG with restarts.

    Args:
        p (Problem): problem with the sparse regularizer
        params (SolverParams): schedule from derive_params_serial
        budget (Budget): stopping rules
        f_star (float): reference value subtracted in the trace (0 reports f itself)
        correction (bool): False runs the phi = 0 ablation
        snapshot (str): 'random' (y_t) or 'average'

    Returns:
        SolverResult: output point, trace and per-restart suboptimality
    """
    if not correction:
        params = replace(params, phi=0.0)
    method = AccSVRGEpochs(p, params, snapshot=snapshot)
    logger.info(f"ss_acc_svrg: m={params.m}, theta={params.theta:.5g}, eta={params.eta:.5g}, "
                f"phi={params.phi:.5g}, S={params.S}")
    result = run_svrg_family(p, method, budget, f_star=f_star, epochs_per_restart=params.S, x0=x0,
                             callback=callback, label='ss_acc_svrg')
    result.info['params'] = asdict(params)
    return result


def svrg_serial(p: Problem, step: Optional[float] = None, m: Optional[int] = None,
                budget: Optional[Budget] = None, seed: int = 0, step_const: float = 4.0,
                f_star: float = 0.0, x0: Optional[np.ndarray] = None,
                callback: Optional[Callable[[TraceRecord, np.ndarray], None]] = None) -> SolverResult:
    """Sparse SVRG: step 1/(step_const L) by default, m = 2n, snapshot = random inner iterate."""
    eta = 1.0 / (step_const * p.L) if step is None else step
    params = SolverParams.plain_svrg(m if m is not None else 2 * p.n, eta, p.L, p.mu, seed)
    method = AccSVRGEpochs(p, params)
    logger.info(f"svrg: m={params.m}, eta={eta:.5g}")
    result = run_svrg_family(p, method, budget or Budget(), f_star=f_star, x0=x0,
                             callback=callback, label='svrg')
    result.info['params'] = asdict(params)
    return result


@dataclass
class SagaMemory:
    """Per-sample derivative memory alpha_i and the average (1/n) sum_i alpha_i a_i."""

    memory: np.ndarray
    average: np.ndarray

    @classmethod
    def initialize(cls, p: Problem, x: np.ndarray) -> 'SagaMemory':
        """Full pass at x (n gradient evaluations)."""
        ds = p.dataset
        _, lp = gradient_and_derivatives(p, x)
        average = np.zeros(p.d)
        accumulate_gradient(ds.indptr, ds.indices, ds.data, lp, 0, p.n, average)
        return cls(memory=lp.copy(), average=average / p.n)

    def direction_matrix(self, p: Problem, x: np.ndarray) -> sparse.csr_matrix:
        """Every sample's SAGA direction at x embedded as CSR rows."""
        ds = p.dataset
        rows = ds.row_ids()
        cols = ds.indices
        diff = logistic_derivatives(ds.to_csr() @ x, ds.labels) - self.memory
        values = (diff[rows] * ds.data + p.profile.d_diag[cols] * self.average[cols]
                  + p.reg[cols] * x[cols])
        return sparse.csr_matrix((values, ds.indices, ds.indptr), shape=(p.n, p.d))


def saga_serial(p: Problem, step: Optional[float] = None, budget: Optional[Budget] = None,
                seed: int = 0, step_const: float = 3.0, f_star: float = 0.0,
                x0: Optional[np.ndarray] = None,
                callback: Optional[Callable[[TraceRecord, np.ndarray], None]] = None,
                state: Optional[SagaMemory] = None) -> SolverResult:
    """
    Sparse SAGA: step 1/(step_const L) by default; a trace point every n iterations.

    Segment p draws its n samples from stream (seed, 0, p, 1).
    """
    if p.regularizer != 'sparse':
        raise ValueError("Sparse solvers require the sparse regularizer mode")
    budget = budget or Budget()
    step = 1.0 / (step_const * p.L) if step is None else step
    ds = p.dataset
    x = np.zeros(p.d) if x0 is None else np.array(x0, dtype=np.float64)
    recorder = TraceRecorder(p, f_star, budget, callback=callback)
    recorder.start(x)
    if budget.max_passes is not None and budget.max_passes <= 0:
        return SolverResult(x=x, trace=recorder.records, info={'solver': 'saga', 'stopped_by': 'max_passes'})

    if state is None:
        state = SagaMemory.initialize(p, x)
    passes = 1.0
    inv_n = 1.0 / p.n
    segment = 0
    logger.info(f"saga: step={step:.5g}")
    while True:
        samples = rng_for(seed, 0, segment, 1).integers(0, p.n, size=p.n)
        saga_segment(ds.indptr, ds.indices, ds.data, ds.labels, p.reg, p.profile.d_diag, x,
                     state.memory, state.average, samples, step, inv_n)
        segment += 1
        passes += 1.0
        if recorder.record(0, segment, passes, x):
            break
    return SolverResult(x=x, trace=recorder.records,
                        info={'solver': 'saga', 'stopped_by': 'budget', 'segments': segment,
                              'step': step, 'passes': passes})
