"""
Asynchronous Engine

Lock-free multi-threaded solvers over a shared parameter vector:

- AS-Acc-SVRG: workers fetch-increment a shared sample counter, read z
  inconsistently on the sample support, form the coupled point with the
  sparse correction and apply the sparse update with per-coordinate atomic
  adds. The worker that draws the pre-drawn snapshot index densifies y.
- KroMagnon: the same loop with theta = 1, phi = 0.
- ASAGA: SAGA with an atomic exchange on the per-sample memory and atomic adds
  on both x and the shared average.

Worker loops are compiled with numba and run with the GIL released on a
ThreadPoolExecutor; joining the futures is the epoch barrier. Worker w draws
its samples from the stream (seed, r, s, w + 1), so with one worker every
solver reproduces its serial counterpart exactly.

@version 0.1.0
@date October 2026
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional

import numpy as np
from numba import njit

from atomics import (atomic_add_float, atomic_fetch_add_int, atomic_load_float, atomic_load_int,
                     atomic_store_float, atomic_xchg_float)
from glm_objective import Problem, gradient_and_derivatives
from kernels import accumulate_gradient, couple, estimator_entry, logistic_derivative, saga_entry
from serial_solvers import (DEFAULT_OMEGA, Budget, EpochMethod, SolverParams, SolverResult,
                            TraceRecord, TraceRecorder, rng_for, run_svrg_family, schedule_params)

logger = logging.getLogger(__name__)


class AsyncWorkerError(RuntimeError):
    """Raised when a worker thread fails; the run is aborted."""

    def __init__(self, worker: int, cause: BaseException):
        super().__init__(f"Worker {worker} failed: {cause!r}")
        self.worker = worker
        self.cause = cause


class SharedVector:
    """Dense float64 vector whose coordinates are read and written atomically."""

    def __init__(self, values):
        self.array = np.ascontiguousarray(np.array(values, dtype=np.float64))
        self.base = int(self.array.ctypes.data)

    @classmethod
    def zeros(cls, d: int) -> 'SharedVector':
        return cls(np.zeros(d))

    def __len__(self) -> int:
        return self.array.shape[0]

    def load(self, v: int) -> float:
        return float(atomic_load_float(self.base, v))

    def store(self, v: int, value: float) -> None:
        atomic_store_float(self.base, v, value)

    def assign(self, values) -> None:
        """Overwrite in place (only between epochs)."""
        self.array[:] = values

    def copy(self) -> np.ndarray:
        return self.array.copy()


class SharedCounter:
    """Atomic int64 counter."""

    def __init__(self, start: int = 0):
        self.array = np.array([start], dtype=np.int64)
        self.base = int(self.array.ctypes.data)

    def reset(self, value: int = 0) -> None:
        self.array[0] = value

    def fetch_add(self, increment: int = 1) -> int:
        return int(atomic_fetch_add_int(self.base, 0, increment))

    def load(self) -> int:
        return int(atomic_load_int(self.base, 0))


def shared_add(sv: SharedVector, v: int, delta: float) -> float:
    """Atomic read-modify-write add on coordinate v; returns the replaced value."""
    if not 0 <= v < len(sv):
        raise IndexError(f"Coordinate {v} out of range for length {len(sv)}")
    return float(atomic_add_float(sv.base, v, delta))


@njit(nogil=True, cache=True)
def _read_support(base, support, out):
    for j in range(support.shape[0]):
        out[j] = atomic_load_float(base, support[j])


def inconsistent_read(sv: SharedVector, support: np.ndarray) -> np.ndarray:
    """Per-coordinate atomic loads on support; no consistency across coordinates."""
    support = np.asarray(support, dtype=np.int64)
    out = np.empty(support.shape[0])
    if support.size:
        _read_support(sv.base, support, out)
    return out


def parallel_full_gradient(p: Problem, x: np.ndarray, workers: int,
                           executor: Optional[ThreadPoolExecutor] = None) -> np.ndarray:
    """Full gradient from per-worker partial sums reduced in worker order."""
    if workers < 1:
        raise ValueError(f"Number of workers must be at least 1, got {workers}")
    if executor is None and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return gradient_and_derivatives(p, x, workers=workers, executor=pool)[0]
    return gradient_and_derivatives(p, x, workers=workers, executor=executor)[0]


def derive_params_async(n: int, kappa: float, omega: float = DEFAULT_OMEGA, delta: float = 1.0,
                        tau_tilde: float = 0.0, m_override: Optional[int] = None, L: float = 1.0,
                        seed: int = 0, async_constant: Optional[float] = None) -> SolverParams:
    """
    Asynchronous schedule with A = 1 + 2 sqrt(delta) tau_tilde:
    theta = sqrt(m) / (sqrt(kappa A) + sqrt(m)), phi = (1 - theta) / L,
    eta = (1 - theta) / (L theta A), S = ceil(2 omega sqrt(kappa A / m)).

    async_constant replaces A when given (practical tuning).
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    if tau_tilde < 0.0:
        raise ValueError(f"tau_tilde must be nonnegative, got {tau_tilde}")
    factor = 1.0 + 2.0 * math.sqrt(delta) * tau_tilde if async_constant is None else async_constant
    if factor < 1.0:
        raise ValueError(f"Asynchrony factor must be at least 1, got {factor}")
    return schedule_params(n, kappa, omega, factor, tau_tilde, m_override, L, seed)


def speedup_tau_threshold(n: int, kappa: float, delta: float) -> float:
    """Overlap below which the asynchronous complexity matches the serial one up to constants."""
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    return min(float(n), max(n / kappa, 1.0) / math.sqrt(delta))


@njit(nogil=True, cache=True)
def acc_worker(indptr, indices, data, labels, reg, z_base, counter_base, m, x_snap, dg, lp_snap,
               samples, theta, phi, eta, t_snap, y_snap, ybuf,
               measure, record, stats, log_k, log_v, log_delta):
    """
    Worker loop of one asynchronous accelerated SVRG epoch.

    stats receives (iterations, max observed overlap, summed overlap); the
    overlap of an iteration is the number of counter values handed out while
    it ran. With record set, every applied add is logged to (log_v, log_delta)
    and every fetched counter value to log_k.
    """
    d = x_snap.shape[0]
    it = 0
    n_logged = 0
    while True:
        k = atomic_fetch_add_int(counter_base, 0, 1)
        if k >= m:
            break
        i = samples[it]
        # y_t is taken before this worker applies iteration t
        if k == t_snap:
            for v in range(d):
                y_snap[v] = couple(atomic_load_float(z_base, v), x_snap[v], dg[v], theta, phi)
        lo = indptr[i]
        hi = indptr[i + 1]
        margin = 0.0
        for jj in range(lo, hi):
            v = indices[jj]
            y_v = couple(atomic_load_float(z_base, v), x_snap[v], dg[v], theta, phi)
            ybuf[jj - lo] = y_v
            margin += data[jj] * y_v
        coef = logistic_derivative(margin, labels[i]) - lp_snap[i]
        for jj in range(lo, hi):
            v = indices[jj]
            g = estimator_entry(coef, data[jj], reg[v], ybuf[jj - lo], x_snap[v], dg[v])
            delta = -eta * g
            atomic_add_float(z_base, v, delta)
            if record:
                log_v[n_logged] = v
                log_delta[n_logged] = delta
                n_logged += 1
        if record:
            log_k[it] = k
        if measure:
            # iterations started by other workers while this one ran
            overlap = min(atomic_load_int(counter_base, 0), m) - k - 1
            if overlap < 0:
                overlap = 0
            if overlap > stats[1]:
                stats[1] = overlap
            stats[2] += overlap
        it += 1
    stats[0] = it
    return n_logged


@njit(nogil=True, cache=True)
def saga_worker(indptr, indices, data, labels, reg, d_diag, x_base, memory_base, average_base,
                counter_base, m, samples, step, inv_n, xbuf, audit, audit_i, audit_margin, audit_lp):
    """Worker loop of one ASAGA segment; with audit set every memory write is logged."""
    it = 0
    while True:
        k = atomic_fetch_add_int(counter_base, 0, 1)
        if k >= m:
            break
        i = samples[it]
        lo = indptr[i]
        hi = indptr[i + 1]
        margin = 0.0
        for jj in range(lo, hi):
            x_v = atomic_load_float(x_base, indices[jj])
            xbuf[jj - lo] = x_v
            margin += data[jj] * x_v
        lp = logistic_derivative(margin, labels[i])
        diff = lp - atomic_xchg_float(memory_base, i, lp)
        for jj in range(lo, hi):
            v = indices[jj]
            g = saga_entry(diff, data[jj], d_diag[v], atomic_load_float(average_base, v), reg[v], xbuf[jj - lo])
            atomic_add_float(x_base, v, -step * g)
            atomic_add_float(average_base, v, diff * data[jj] * inv_n)
        if audit:
            audit_i[it] = i
            audit_margin[it] = margin
            audit_lp[it] = lp
        it += 1
    return it


@dataclass
class AsyncEpochState:
    """Snapshot data of one epoch (read-only for the workers) plus the shared counter and capture slot."""

    x_snap: np.ndarray
    g: np.ndarray
    dg: np.ndarray
    lp: np.ndarray
    counter: SharedCounter
    t_snap: int
    y_snap: np.ndarray

    @classmethod
    def create(cls, p: Problem, x_snap: np.ndarray, t_snap: int, workers: int,
               executor: Optional[ThreadPoolExecutor]) -> 'AsyncEpochState':
        g, lp = gradient_and_derivatives(p, x_snap, workers=workers, executor=executor)
        dg = p.profile.d_diag * g
        return cls(x_snap=x_snap, g=g, dg=dg, lp=lp, counter=SharedCounter(0), t_snap=t_snap,
                   y_snap=np.empty(p.d))


@dataclass
class UpdateLog:
    """Applied adds of one epoch, per worker."""

    counters: List[np.ndarray] = field(default_factory=list)
    coords: List[np.ndarray] = field(default_factory=list)
    deltas: List[np.ndarray] = field(default_factory=list)

    @property
    def update_count(self) -> int:
        return int(sum(c.size for c in self.coords))

    def contributing_iterations(self) -> np.ndarray:
        return np.sort(np.concatenate(self.counters)) if self.counters else np.empty(0, dtype=np.int64)


def replay_updates(z0: np.ndarray, log: UpdateLog) -> np.ndarray:
    """z0 plus every logged add, applied single-threaded worker by worker."""
    z = np.array(z0, dtype=np.float64)
    for coords, deltas in zip(log.coords, log.deltas):
        np.add.at(z, coords, deltas)
    return z


def _run_workers(executor: ThreadPoolExecutor, workers: int, task: Callable[[int], object]) -> list:
    futures = [executor.submit(task, w) for w in range(workers)]
    results = []
    failure = None
    for w, future in enumerate(futures):
        try:
            results.append(future.result())
        except Exception as e:
            logger.error(f"Worker {w} raised {e!r}")
            if failure is None:
                failure = AsyncWorkerError(w, e)
    if failure is not None:
        raise failure
    return results


class AsyncAccSVRG(EpochMethod):
    """
    Asynchronous sparse accelerated SVRG epochs (KroMagnon when theta = 1, phi = 0).

    Args:
        p (Problem): problem with the sparse regularizer
        params (SolverParams): schedule, usually from derive_params_async
        workers (int): number of worker threads
        track (bool): log applied updates for replay
        measure (bool): record the overlap of every iteration
    """

    def __init__(self, p: Problem, params: SolverParams, workers: int, track: bool = False,
                 measure: bool = True):
        if p.regularizer != 'sparse':
            raise ValueError("Sparse solvers require the sparse regularizer mode")
        if workers < 1:
            raise ValueError(f"Number of workers must be at least 1, got {workers}")
        self.p = p
        self.params = params
        self.workers = workers
        self.track = track
        self.measure = measure
        self.passes_per_epoch = (p.n + 2.0 * params.m) / p.n
        self.executor = ThreadPoolExecutor(max_workers=workers, thread_name_prefix='sparseacc')
        self.z = SharedVector.zeros(p.d)
        self.x_snap = None
        self.logs: List[UpdateLog] = []
        self.z_starts: List[np.ndarray] = []
        self.tau_max = 0
        self.tau_sum = 0
        self.iterations = 0

    def start_restart(self, x_r: np.ndarray) -> None:
        self.x_snap = np.array(x_r, dtype=np.float64)
        self.z.assign(x_r)

    def run_epoch(self, restart: int, epoch: int) -> np.ndarray:
        p, params = self.p, self.params
        ds = p.dataset
        m = params.m
        t_snap = int(rng_for(params.seed, restart, epoch).integers(0, m))
        state = AsyncEpochState.create(p, self.x_snap, t_snap, self.workers, self.executor)
        samples = [rng_for(params.seed, restart, epoch, w + 1).integers(0, p.n, size=m)
                   for w in range(self.workers)]
        width = max(ds.max_row_nnz, 1)
        log_size = m * width if self.track else 0
        stats = np.zeros((self.workers, 3), dtype=np.int64)
        log_k = np.full((self.workers, m if self.track else 0), -1, dtype=np.int64)
        log_v = np.empty((self.workers, log_size), dtype=np.int64)
        log_delta = np.empty((self.workers, log_size))
        if self.track:
            self.z_starts.append(self.z.copy())

        def task(w: int) -> int:
            return acc_worker(ds.indptr, ds.indices, ds.data, ds.labels, p.reg, self.z.base,
                              state.counter.base, m, state.x_snap, state.dg, state.lp, samples[w],
                              params.theta, params.phi, params.eta, state.t_snap, state.y_snap,
                              np.empty(width), self.measure, self.track, stats[w], log_k[w], log_v[w], log_delta[w])

        logged = _run_workers(self.executor, self.workers, task)
        self.iterations += int(stats[:, 0].sum())
        if self.measure:
            self.tau_max = max(self.tau_max, int(stats[:, 1].max()))
            self.tau_sum += int(stats[:, 2].sum())
        if self.track:
            self.logs.append(UpdateLog(
                counters=[log_k[w][:stats[w, 0]].copy() for w in range(self.workers)],
                coords=[log_v[w][:logged[w]].copy() for w in range(self.workers)],
                deltas=[log_delta[w][:logged[w]].copy() for w in range(self.workers)]))
        self.x_snap = state.y_snap
        return state.y_snap

    def overlap_summary(self) -> dict:
        mean = self.tau_sum / self.iterations if self.iterations else 0.0
        return {'tau_max': self.tau_max, 'tau_mean': mean, 'iterations': self.iterations}

    def close(self) -> None:
        self.executor.shutdown(wait=True)


def as_acc_svrg_async(p: Problem, params: SolverParams, workers: int, budget: Budget,
                      f_star: float = 0.0, x0: Optional[np.ndarray] = None,
                      callback: Optional[Callable[[TraceRecord, np.ndarray], None]] = None,
                      track: bool = False) -> SolverResult:
    """
    Asynchronous sparse accelerated SVRG with restarts.

    Args:
        p (Problem): problem with the sparse regularizer
        params (SolverParams): schedule from derive_params_async
        workers (int): worker threads
        budget (Budget): stopping rules, checked at epoch barriers
        track (bool): keep the update logs and epoch start points in info

    Returns:
        SolverResult: output point and trace; info carries the overlap summary

    Raises:
        AsyncWorkerError: if any worker fails
    """
    method = AsyncAccSVRG(p, params, workers, track=track)
    logger.info(f"as_acc_svrg: workers={workers}, m={params.m}, theta={params.theta:.5g}, "
                f"eta={params.eta:.5g}, S={params.S}, A={params.async_factor:.4g}")
    result = run_svrg_family(p, method, budget, f_star=f_star, epochs_per_restart=params.S, x0=x0,
                             callback=callback, label='as_acc_svrg')
    result.info.update({'params': asdict(params), 'workers': workers, **method.overlap_summary()})
    if track:
        result.info['update_logs'] = method.logs
        result.info['z_starts'] = method.z_starts
        result.info['z_final'] = method.z.copy()
    return result


def kromagnon_async(p: Problem, step: Optional[float] = None, workers: int = 1,
                    budget: Optional[Budget] = None, m: Optional[int] = None, seed: int = 0,
                    step_const: float = 2.0, f_star: float = 0.0, x0: Optional[np.ndarray] = None,
                    callback: Optional[Callable[[TraceRecord, np.ndarray], None]] = None,
                    track: bool = False) -> SolverResult:
    """Asynchronous sparse SVRG: no coupling, no correction, step 1/(step_const L) by default."""
    eta = 1.0 / (step_const * p.L) if step is None else step
    params = SolverParams.plain_svrg(m if m is not None else 2 * p.n, eta, p.L, p.mu, seed)
    method = AsyncAccSVRG(p, params, workers, track=track)
    logger.info(f"kromagnon: workers={workers}, m={params.m}, eta={eta:.5g}")
    result = run_svrg_family(p, method, budget or Budget(), f_star=f_star, x0=x0, callback=callback,
                             label='kromagnon')
    result.info.update({'params': asdict(params), 'workers': workers, **method.overlap_summary()})
    return result


@dataclass
class SagaAudit:
    """Memory writes of an ASAGA run: sample, margin read and value stored."""

    samples: List[np.ndarray] = field(default_factory=list)
    margins: List[np.ndarray] = field(default_factory=list)
    stored: List[np.ndarray] = field(default_factory=list)


def asaga_async(p: Problem, step: Optional[float] = None, workers: int = 1,
                budget: Optional[Budget] = None, seed: int = 0, step_const: float = 3.0,
                f_star: float = 0.0, x0: Optional[np.ndarray] = None,
                callback: Optional[Callable[[TraceRecord, np.ndarray], None]] = None,
                audit: bool = False) -> SolverResult:
    """
    Asynchronous sparse SAGA; a trace point every n iterations (one segment).

    The per-sample memory is swapped atomically, x and the average are
    updated with atomic adds. With audit set, info['audit'] holds every
    memory write and info['memory'] the final table.
    """
    if p.regularizer != 'sparse':
        raise ValueError("Sparse solvers require the sparse regularizer mode")
    if workers < 1:
        raise ValueError(f"Number of workers must be at least 1, got {workers}")
    budget = budget or Budget()
    step = 1.0 / (step_const * p.L) if step is None else step
    ds = p.dataset
    x = SharedVector(np.zeros(p.d) if x0 is None else x0)
    recorder = TraceRecorder(p, f_star, budget, callback=callback)
    recorder.start(x.copy())
    info = {'solver': 'asaga', 'workers': workers, 'step': step}
    if budget.max_passes is not None and budget.max_passes <= 0:
        return SolverResult(x=x.copy(), trace=recorder.records, info=info)

    _, lp0 = gradient_and_derivatives(p, x.array)
    average0 = np.zeros(p.d)
    accumulate_gradient(ds.indptr, ds.indices, ds.data, lp0, 0, p.n, average0)
    memory = SharedVector(lp0)
    average = SharedVector(average0 / p.n)
    counter = SharedCounter(0)
    inv_n = 1.0 / p.n
    width = max(ds.max_row_nnz, 1)
    record = SagaAudit()
    passes = 1.0
    segment = 0
    logger.info(f"asaga: workers={workers}, step={step:.5g}")
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix='sparseacc') as executor:
        while True:
            samples = [rng_for(seed, 0, segment, w + 1).integers(0, p.n, size=p.n) for w in range(workers)]
            audit_size = p.n if audit else 0
            audit_i = np.empty((workers, audit_size), dtype=np.int64)
            audit_margin = np.empty((workers, audit_size))
            audit_lp = np.empty((workers, audit_size))
            counter.reset(0)

            def task(w: int) -> int:
                return saga_worker(ds.indptr, ds.indices, ds.data, ds.labels, p.reg, p.profile.d_diag,
                                   x.base, memory.base, average.base, counter.base, p.n, samples[w],
                                   step, inv_n, np.empty(width), audit, audit_i[w], audit_margin[w],
                                   audit_lp[w])

            done = _run_workers(executor, workers, task)
            if audit:
                for w in range(workers):
                    record.samples.append(audit_i[w][:done[w]].copy())
                    record.margins.append(audit_margin[w][:done[w]].copy())
                    record.stored.append(audit_lp[w][:done[w]].copy())
            segment += 1
            passes += 1.0
            if recorder.record(0, segment, passes, x.copy()):
                break

    info.update({'segments': segment, 'passes': passes})
    if audit:
        info['audit'] = record
        info['memory'] = memory.copy()
        info['initial_memory'] = lp0
    return SolverResult(x=x.copy(), trace=recorder.records, info=info)
