"""
Benchmark Command Line

Front end of SparseAccBench: dataset preparation, solver runs, parameter
sweeps, thread speed-up studies, verification suites and f* estimation.
Traces are written as CSV with the columns
restart,epoch,effective_passes,wall_time_s,suboptimality (plus sweep_value
for sweeps); verification reports are JSON.

Settings are merged as solver defaults < run config file (--config) < flags.

Exit codes: 0 ok, 1 worker failure, 2 usage or input error, 3 divergence,
4 verification failure.

@version 0.1.0
@date October 2026
"""

import os
import sys
import math
import logging
import argparse
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from async_engine import AsyncWorkerError, speedup_tau_threshold
from config_service import ConfigurationError, SolverDefaultsService, get_defaults_service, load_run_config
from dataset_io import (SparseDataset, compute_support_profile, dataset_stats, gen_dense_toy, gen_random_sparse,
                        gen_synthetic, load_dataset, normalize_rows, save_cache)
from glm_objective import SMOOTHNESS_MODES, FStarCache, Problem, estimate_fstar
from perturbed_harness import (CheckReport, VerificationError, check_coupling_inequality, check_equivalence,
                               check_equivalent_update, check_overlap_bound, check_unbiasedness,
                               check_variance_bound, simulate_epoch)
from serial_solvers import Budget, DivergenceError, SolverResult, params_for_problem
from solver_factory import SOLVER_MAP, SolverFactory
from utils import format_decade_summary, get_data_dir, save_report, write_speedup_csv, write_trace_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_WORKER_FAILURE = 1
EXIT_USAGE = 2
EXIT_DIVERGENCE = 3
EXIT_VIOLATION = 4

LOG_LEVEL_ENV = "SPARSEACC_LOG_LEVEL"
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

DEFAULT_SOLVER = 'ss_acc_svrg'
VERIFY_SUITES = ('unbiased', 'variance', 'overlap', 'equivalence', 'coupling')
SWEEP_PARAMS = ('omega', 'mu', 'tau_tilde')

# Flags copied into the merged settings when given on the command line
FLAG_KEYS = (
    'solver', 'dataset', 'synthetic', 'random_sparse', 'dense_toy', 'data_seed', 'normalize', 'mu',
    'smoothness', 'regularizer', 'threads', 'seed', 'budget_passes', 'target_subopt', 'max_restarts',
    'omega', 'tau_tilde', 'async_constant', 'step_const', 'step', 'm', 'correction', 'fstar', 'out',
)


@dataclass
class RunConfig:
    """
    One solver run: data source, problem, solver settings, budget and output.

    Solver-specific overrides (step constants, m, omega, tau_tilde, threads,
    ...) live in settings and are handed to the solver factory.
    """

    solver: str = DEFAULT_SOLVER
    dataset: Optional[str] = None
    synthetic: Optional[int] = None
    random_sparse: Optional[Sequence[float]] = None
    dense_toy: Optional[Sequence[int]] = None
    data_seed: int = 0
    normalize: bool = False
    mu: float = 1e-4
    smoothness: Union[str, float] = 'safe'
    regularizer: str = 'sparse'
    budget_passes: Optional[float] = 100.0
    target_subopt: Optional[float] = None
    max_restarts: Optional[int] = None
    seed: int = 0
    fstar: Union[str, float] = 'auto'
    out: Optional[str] = None
    settings: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, values: Dict[str, Any]) -> 'RunConfig':
        """Split a merged mapping into run fields and solver settings, then validate."""
        known = {f.name for f in fields(cls)} - {'settings'}
        run_values = {key: value for key, value in values.items() if key in known}
        settings = {key: value for key, value in values.items() if key not in known and key != 'description'}
        return cls(settings=settings, **run_values).validate()

    @property
    def threads(self) -> int:
        return int(self.settings.get('threads', 1))

    def sources(self) -> List[str]:
        return [name for name in ('dataset', 'synthetic', 'random_sparse', 'dense_toy')
                if getattr(self, name) is not None]

    def validate(self) -> 'RunConfig':
        """
        Check the run invariants.

        Raises:
            ValueError: unknown solver, several data sources, empty or non-positive
                budget, bad thread count, non-positive mu, bad smoothness or f* value
        """
        if self.solver not in SOLVER_MAP:
            logger.error(f"Unknown solver: {self.solver}")
            raise ValueError(f"Unknown solver: {self.solver}. Choose one of {', '.join(sorted(SOLVER_MAP))}")
        if len(self.sources()) > 1:
            logger.error(f"Several data sources given: {self.sources()}")
            raise ValueError(f"Give exactly one data source, got {', '.join(self.sources())}")
        if self.budget_passes is None and self.target_subopt is None:
            raise ValueError("A budget needs max passes or a target suboptimality")
        for name in ('budget_passes', 'target_subopt'):
            value = getattr(self, name)
            if value is not None and float(value) <= 0.0:
                logger.error(f"Invalid {name}: {value}")
                raise ValueError(f"{name} must be positive, got {value}")
        if self.max_restarts is not None and int(self.max_restarts) < 1:
            raise ValueError(f"max_restarts must be at least 1, got {self.max_restarts}")
        try:
            threads = self.threads
        except (TypeError, ValueError):
            raise ValueError(f"Invalid thread count: {self.settings.get('threads')}. Must be an integer.")
        if threads < 1:
            logger.error(f"Invalid thread count: {threads}")
            raise ValueError(f"Invalid thread count: {threads}. Must be at least 1.")
        self.mu = float(self.mu)
        if self.mu <= 0.0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not (isinstance(self.smoothness, str) and self.smoothness in SMOOTHNESS_MODES):
            try:
                self.smoothness = float(self.smoothness)
            except (TypeError, ValueError):
                raise ValueError(f"smoothness must be one of {SMOOTHNESS_MODES} or a number, got {self.smoothness}")
        if self.fstar != 'auto':
            try:
                self.fstar = float(self.fstar)
            except (TypeError, ValueError):
                raise ValueError(f"fstar must be 'auto' or a number, got {self.fstar}")
        return self

    def budget(self, target: Optional[float] = None) -> Budget:
        return Budget(max_passes=None if self.budget_passes is None else float(self.budget_passes),
                      target_suboptimality=target if target is not None else self.target_subopt,
                      max_restarts=None if self.max_restarts is None else int(self.max_restarts))

    def solver_settings(self, **overrides) -> Dict[str, Any]:
        settings = dict(self.settings, seed=int(self.seed))
        settings.update(overrides)
        return settings


@dataclass
class SpeedupTable:
    """Wall time to a target suboptimality per thread count, relative to one thread."""

    target: float
    rows: List[Dict[str, float]] = field(default_factory=list)

    def add(self, threads: int, wall_time: float, tau_observed: int = 0) -> Dict[str, float]:
        if not wall_time > 0.0:
            raise ValueError(f"Wall time must be positive, got {wall_time} at {threads} threads")
        if not self.rows and threads != 1:
            raise ValueError("The first row of a speed-up table is the 1-thread baseline")
        baseline = wall_time if not self.rows else self.rows[0]['wall_time_s']
        row = {'threads': threads, 'wall_time_s': wall_time, 'speedup': baseline / wall_time,
               'tau_observed': tau_observed}
        self.rows.append(row)
        return row

    def speedup(self, threads: int) -> float:
        for row in self.rows:
            if row['threads'] == threads:
                return row['speedup']
        raise KeyError(threads)


def build_run_config(args: argparse.Namespace, service: Optional[SolverDefaultsService] = None,
                     overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Merge solver defaults, the optional config file and the given flags."""
    service = service or get_defaults_service()
    file_values = load_run_config(args.config) if getattr(args, 'config', None) else {}
    flag_values = {key: getattr(args, key) for key in FLAG_KEYS if getattr(args, key, None) is not None}
    solver = flag_values.get('solver') or file_values.get('solver') or DEFAULT_SOLVER
    if solver not in SOLVER_MAP:
        logger.error(f"Unknown solver: {solver}")
        raise ValueError(f"Unknown solver: {solver}. Choose one of {', '.join(sorted(SOLVER_MAP))}")

    merged = service.get_solver_defaults(solver)
    merged.update(file_values)
    merged.update(flag_values)
    merged.update(overrides or {})
    merged['solver'] = solver
    return RunConfig.from_mapping(merged)


def load_data(cfg: RunConfig, fallback: Optional[Callable[[], SparseDataset]] = None) -> SparseDataset:
    """Read or generate the configured dataset (fallback when none is configured)."""
    if cfg.dataset is not None:
        ds = load_dataset(cfg.dataset)
    elif cfg.synthetic is not None:
        ds = gen_synthetic(int(cfg.synthetic), cfg.data_seed)
    elif cfg.random_sparse is not None:
        n, d, density = cfg.random_sparse
        ds = gen_random_sparse(int(n), int(d), float(density), cfg.data_seed)
    elif cfg.dense_toy is not None:
        n, d = cfg.dense_toy
        ds = gen_dense_toy(int(n), int(d), cfg.data_seed)
    elif fallback is not None:
        ds = fallback()
    else:
        raise ValueError("No dataset given: use --dataset, --synthetic, --random-sparse or --dense-toy")
    if cfg.normalize:
        ds = normalize_rows(ds)
    return ds


def solver_regularizer(cfg: RunConfig) -> str:
    """The lagged-update solvers run only on the dense regularizer."""
    required = SOLVER_MAP[cfg.solver].regularizer
    if required == 'dense' and cfg.regularizer != 'dense':
        logger.warning(f"{cfg.solver} needs the dense regularizer; ignoring regularizer={cfg.regularizer}")
        return 'dense'
    return cfg.regularizer


def load_problem(cfg: RunConfig, regularizer: Optional[str] = None,
                 fallback: Optional[Callable[[], SparseDataset]] = None) -> Problem:
    return Problem.build(load_data(cfg, fallback), cfg.mu, cfg.smoothness, regularizer or solver_regularizer(cfg))


def fstar_cache(service: SolverDefaultsService) -> FStarCache:
    section = service.get_section('fstar')
    return FStarCache(os.path.join(get_data_dir(), section.get('cache_file', 'fstar_cache.txt')))


def resolve_fstar(cfg: RunConfig, p: Problem, service: SolverDefaultsService) -> float:
    """The configured f*, or an estimate (cached per dataset and mu) when 'auto'."""
    if cfg.fstar != 'auto':
        return float(cfg.fstar)
    section = service.get_section('fstar')
    sparse_p = p if p.regularizer == 'sparse' else p.with_regularizer('sparse')
    result = estimate_fstar(sparse_p, float(section.get('budget_passes', 400.0)), cache=fstar_cache(service),
                            seed=cfg.seed, polish=bool(section.get('polish', True)))
    return result.f_star


def run_solver(cfg: RunConfig, p: Problem, f_star: float, budget: Optional[Budget] = None,
               **overrides) -> SolverResult:
    solver = SolverFactory.create_solver(cfg.solver, cfg.solver_settings(**overrides))
    return solver.run(p, budget or cfg.budget(), f_star=f_star)


def _report_overlap(p: Problem, result: SolverResult) -> None:
    if 'tau_max' not in result.info:
        return
    threshold = speedup_tau_threshold(p.n, p.kappa, p.profile.delta)
    logger.info(f"Observed overlap: tau_max={result.info['tau_max']}, tau_mean={result.info['tau_mean']:.3g}; "
                f"linear speed-up region tau < {threshold:.4g}")


def _print_summary(line: str, csv_on_stdout: bool) -> None:
    print(line, file=sys.stderr if csv_on_stdout else sys.stdout)


def cmd_prep(args: argparse.Namespace, service: SolverDefaultsService) -> int:
    """Print dataset statistics; optionally write the binary cache of the compacted data."""
    cfg = build_run_config(args, service)
    ds, profile = compute_support_profile(load_data(cfg))
    stats = dataset_stats(ds, profile)
    for key in ('n', 'd', 'nnz'):
        print(f"{key}: {stats[key]}")
    for key in ('density', 'delta', 'min_d', 'max_d'):
        print(f"{key}: {stats[key]:.6g}")
    if args.cache_out:
        save_cache(ds, args.cache_out)
    return EXIT_OK


def cmd_run(args: argparse.Namespace, service: SolverDefaultsService) -> int:
    cfg = build_run_config(args, service)
    p = load_problem(cfg)
    f_star = resolve_fstar(cfg, p, service)
    result = run_solver(cfg, p, f_star)
    out = cfg.out or '-'
    if SOLVER_MAP[cfg.solver].threaded:
        threads = int(cfg.settings.get('threads', 1))
        write_trace_csv(out, [({'threads': threads}, result.trace)], extra_columns=('threads',))
    else:
        write_trace_csv(out, [({}, result.trace)])
    _report_overlap(p, result)
    _print_summary(format_decade_summary(cfg.solver, result.trace), out == '-')
    return EXIT_OK


def measure_speedup(cfg: RunConfig, p: Problem, f_star: float, thread_counts: Sequence[int], target: float,
                    repeats: int = 3, soft_target: Optional[Dict[str, float]] = None) -> SpeedupTable:
    """
    Median wall time to target over repeats for each thread count, same config and seed.

    Raises:
        ValueError: bad thread counts or repeats, or target not reached at 1 thread
    """
    if repeats < 1:
        raise ValueError(f"repeats must be at least 1, got {repeats}")
    counts: List[int] = []
    for threads in thread_counts:
        if threads < 1:
            logger.error(f"Invalid thread count: {threads}")
            raise ValueError(f"Invalid thread count: {threads}. Must be at least 1.")
        if threads in counts:
            logger.warning(f"Duplicate thread count {threads} ignored")
            continue
        counts.append(threads)
    if 1 in counts:
        counts.remove(1)
    counts.insert(0, 1)

    budget = cfg.budget(target=target)
    table = SpeedupTable(target=target)
    for threads in counts:
        times, taus = [], []
        for repeat in range(repeats):
            result = run_solver(cfg, p, f_star, budget, threads=threads)
            elapsed = result.time_to(target)
            if elapsed is None:
                if threads == 1:
                    logger.error(f"Target {target:g} not reached at 1 thread; final suboptimality "
                                 f"{result.final_suboptimality:.3e} after {result.trace[-1].effective_passes:.1f} passes")
                    raise ValueError(f"Target suboptimality {target:g} is not reachable within the budget "
                                     f"at 1 thread (final {result.final_suboptimality:.3e})")
                logger.warning(f"Target {target:g} not reached at {threads} threads (repeat {repeat})")
                elapsed = math.inf
            times.append(elapsed)
            taus.append(int(result.info.get('tau_max', 0)))
        row = table.add(threads, float(np.median(times)), max(taus))
        logger.info(f"{threads} threads: {row['wall_time_s']:.4g}s, speedup {row['speedup']:.3g}")

    if soft_target and SOLVER_MAP[cfg.solver].threaded:
        soft_threads = int(soft_target.get('soft_target_threads', 4))
        soft_speedup = float(soft_target.get('soft_target_speedup', 2.0))
        if soft_threads in counts and table.speedup(soft_threads) < soft_speedup:
            logger.warning(f"Speed-up {table.speedup(soft_threads):.3g} at {soft_threads} threads is below "
                           f"{soft_speedup:g} (machine has {os.cpu_count()} cores)")
    return table


def cmd_speedup(args: argparse.Namespace, service: SolverDefaultsService) -> int:
    section = service.get_section('speedup')
    cfg = build_run_config(args, service)
    target = cfg.target_subopt if cfg.target_subopt is not None else float(section.get('target_subopt', 1e-5))
    repeats = args.repeats if args.repeats is not None else int(section.get('repeats', 3))
    p = load_problem(cfg)
    f_star = resolve_fstar(cfg, p, service)
    table = measure_speedup(cfg, p, f_star, args.threads_list, target, repeats, soft_target=section)
    print("threads,wall_time_s,speedup,tau_observed")
    for row in table.rows:
        print(f"{row['threads']},{row['wall_time_s']!r},{row['speedup']!r},{row['tau_observed']}")
    if cfg.out:
        write_speedup_csv(cfg.out, table.rows)
    return EXIT_OK


def run_verify_suite(suite: str, cfg: RunConfig, section: Dict[str, Any], trials: Optional[int] = None,
                     service: Optional[SolverDefaultsService] = None) -> List[CheckReport]:
    """
    Run one verification suite on the configured data (small generated data by default).

    Raises:
        ValueError: unknown suite
    """
    if suite not in VERIFY_SUITES:
        logger.error(f"Unknown verification suite: {suite}")
        raise ValueError(f"Unknown verification suite: {suite}. Choose one of {', '.join(VERIFY_SUITES)}")
    omega = float(cfg.settings.get('omega', 50.0))

    if suite == 'equivalence':
        n, d = section.get('dense_toy', [1000, 50])
        p = load_problem(cfg, 'sparse', fallback=lambda: gen_dense_toy(int(n), int(d), cfg.data_seed))
        budget = Budget(max_passes=float(section.get('equivalence_passes', 10.0)))
        return [check_equivalence(p, seed=cfg.seed, budget=budget, omega=omega)]

    n, d, density = section.get('sample_data', [50, 20, 0.2])
    p = load_problem(cfg, 'sparse',
                     fallback=lambda: gen_random_sparse(int(n), int(d), float(density), cfg.data_seed))
    if suite == 'unbiased':
        rng = np.random.default_rng(cfg.seed)
        count = trials or int(section.get('unbiased_points', 20))
        points = [(rng.standard_normal(p.d), rng.standard_normal(p.d)) for _ in range(count)]
        return [check_unbiasedness(p, points)]
    if suite == 'variance':
        return [check_variance_bound(p, trials=trials or int(section.get('variance_trials', 1000)), seed=cfg.seed)]

    params = params_for_problem(p, omega=omega, seed=cfg.seed)
    if suite == 'coupling':
        fstar_section = (service or get_defaults_service()).get_section('fstar')
        estimate = estimate_fstar(p, float(fstar_section.get('budget_passes', 400.0)), cache=FStarCache(),
                                  seed=cfg.seed)
        return [check_coupling_inequality(p, params, estimate.x_star, estimate.f_star,
                                          trials=trials or int(section.get('coupling_trials', 20)), seed=cfg.seed)]

    reports = []
    for tau in section.get('taus', [1, 5, 20]):
        for policy in section.get('mask_policies', ['all-missing', 'bernoulli:0.5']):
            trace = simulate_epoch(p, params, int(tau), policy, seed=cfg.seed)
            report = check_overlap_bound(trace, p.profile.delta, trials=trials or int(section.get('overlap_trials', 1000)))
            report.details.update({'tau': int(tau), 'mask_policy': policy})
            reports.append(report)
            update = check_equivalent_update(trace)
            update.details.update({'tau': int(tau), 'mask_policy': policy})
            reports.append(update)
    return reports


def cmd_verify(args: argparse.Namespace, service: SolverDefaultsService) -> int:
    cfg = build_run_config(args, service)
    section = service.get_section('verify')
    if args.taus:
        section['taus'] = args.taus
    if args.mask_policy:
        section['mask_policies'] = args.mask_policy
    reports = run_verify_suite(args.suite, cfg, section, trials=args.trials, service=service)

    violated = False
    for report in reports:
        status = 'VIOLATED' if report.violated else 'ok'
        print(f"{report.check}: {status} (trials={report.trials}, max_margin={report.max_margin:.3e})")
        if report.violated:
            violated = True
            logger.error(f"{report.check} violated: worst_k={report.worst_k}, "
                         f"max_margin={report.max_margin:.3e}, details={report.details}")
    if cfg.out:
        document = {'check': args.suite, 'violated': violated, 'reports': [r.to_dict() for r in reports]}
        saved = save_report(document, cfg.out)
        if not saved['success']:
            raise ValueError(f"Could not write the verification report: {saved['error']}")
        logger.info(f"Verification report written to {saved['filename']}")
    return EXIT_VIOLATION if violated else EXIT_OK


def run_sweep(cfg: RunConfig, param: str, values: Sequence[float],
              service: SolverDefaultsService) -> List[tuple]:
    """One trace per value of param (omega, mu or tau_tilde), all with the config's seed."""
    if param not in SWEEP_PARAMS:
        logger.error(f"Unknown sweep parameter: {param}")
        raise ValueError(f"Unknown sweep parameter: {param}. Choose one of {', '.join(SWEEP_PARAMS)}")
    if not values:
        raise ValueError("A sweep needs at least one value")

    dataset = load_data(cfg)
    regularizer = solver_regularizer(cfg)
    base_problem = None
    base_fstar = None
    traces = []
    for value in values:
        if param == 'mu':
            run_cfg = replace(cfg, mu=float(value), settings=dict(cfg.settings)).validate()
            p = Problem.build(dataset, run_cfg.mu, run_cfg.smoothness, regularizer)
            f_star = resolve_fstar(run_cfg, p, service)
        else:
            run_cfg = replace(cfg, settings=dict(cfg.settings, **{param: float(value)}))
            if base_problem is None:
                base_problem = Problem.build(dataset, cfg.mu, cfg.smoothness, regularizer)
                base_fstar = resolve_fstar(cfg, base_problem, service)
            p, f_star = base_problem, base_fstar
        result = run_solver(run_cfg, p, f_star)
        _report_overlap(p, result)
        traces.append(({'sweep_value': repr(float(value))}, result.trace))
    return traces


def cmd_sweep(args: argparse.Namespace, service: SolverDefaultsService) -> int:
    cfg = build_run_config(args, service)
    traces = run_sweep(cfg, args.param, args.values, service)
    out = cfg.out or '-'
    write_trace_csv(out, traces, extra_columns=('sweep_value',))
    for extra, trace in traces:
        _print_summary(format_decade_summary(f"{cfg.solver} {args.param}={extra['sweep_value']}", trace), out == '-')
    return EXIT_OK


def cmd_fstar(args: argparse.Namespace, service: SolverDefaultsService) -> int:
    cfg = build_run_config(args, service)
    section = service.get_section('fstar')
    p = load_problem(cfg, 'sparse')
    passes = args.fstar_passes if args.fstar_passes is not None else float(section.get('budget_passes', 400.0))
    result = estimate_fstar(p, passes, cache=fstar_cache(service), seed=cfg.seed,
                            polish=bool(section.get('polish', True)))
    print(f"f_star: {result.f_star!r}")
    if result.grad_norm is not None:
        print(f"grad_norm: {result.grad_norm:.3e}")
    print(f"cached: {result.cached}")
    return EXIT_OK


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    data = parser.add_argument_group('data')
    data.add_argument('--config', help='Run configuration file (JSON or YAML)')
    data.add_argument('--dataset', help='LIBSVM text file or .npz cache')
    data.add_argument('--synthetic', type=int, metavar='N', help='Identity design matrix with n = d = N')
    data.add_argument('--random-sparse', type=float, nargs=3, metavar=('N', 'D', 'DENSITY'),
                      help='Random sparse data')
    data.add_argument('--dense-toy', type=int, nargs=2, metavar=('N', 'D'), help='Fully dense toy data')
    data.add_argument('--data-seed', type=int, help='Seed of generated data')
    data.add_argument('--normalize', action='store_const', const=True, help='Scale rows to unit norm')
    data.add_argument('--mu', type=float, help='Regularization strength')
    data.add_argument('--smoothness', help="'safe', 'nominal' or a number")
    data.add_argument('--regularizer', choices=('sparse', 'dense'))

    solver = parser.add_argument_group('solver')
    solver.add_argument('--solver', help=f"One of {', '.join(sorted(SOLVER_MAP))}")
    solver.add_argument('--threads', type=int)
    solver.add_argument('--seed', type=int)
    solver.add_argument('--budget-passes', type=float)
    solver.add_argument('--target-subopt', type=float)
    solver.add_argument('--max-restarts', type=int)
    solver.add_argument('--omega', type=float)
    solver.add_argument('--tau-tilde', type=float)
    solver.add_argument('--async-constant', type=float)
    solver.add_argument('--step-const', type=float)
    solver.add_argument('--step', type=float)
    solver.add_argument('--m', type=int, help='Epoch length (default 2n)')
    solver.add_argument('--no-correction', dest='correction', action='store_const', const=False,
                        help='Drop the sparse variance correction (phi = 0)')
    solver.add_argument('--fstar', help="'auto' or a known optimal value")
    solver.add_argument('--out', help='Output file (CSV, or JSON for verify)')
    solver.add_argument('--log-level', help='Logging level (default from SPARSEACC_LOG_LEVEL or INFO)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='sparseacc', description='Sparse accelerated SVRG benchmarks')
    commands = parser.add_subparsers(dest='command', required=True)

    prep = commands.add_parser('prep', help='Dataset statistics and binary cache')
    _add_run_flags(prep)
    prep.add_argument('--cache-out', help='Write the compacted dataset as .npz')
    prep.set_defaults(handler=cmd_prep)

    run = commands.add_parser('run', help='Run one solver and write its trace')
    _add_run_flags(run)
    run.set_defaults(handler=cmd_run)

    speedup = commands.add_parser('speedup', help='Wall-time speed-up per thread count')
    _add_run_flags(speedup)
    speedup.add_argument('--threads-list', type=int, nargs='+', required=True)
    speedup.add_argument('--repeats', type=int)
    speedup.set_defaults(handler=cmd_speedup)

    verify = commands.add_parser('verify', help='Run a verification suite')
    verify.add_argument('suite', choices=VERIFY_SUITES)
    _add_run_flags(verify)
    verify.add_argument('--trials', type=int)
    verify.add_argument('--taus', type=int, nargs='+')
    verify.add_argument('--mask-policy', nargs='+')
    verify.set_defaults(handler=cmd_verify)

    sweep = commands.add_parser('sweep', help='One trace per parameter value')
    _add_run_flags(sweep)
    sweep.add_argument('--param', choices=SWEEP_PARAMS, required=True)
    sweep.add_argument('--values', type=float, nargs='+', required=True)
    sweep.set_defaults(handler=cmd_sweep)

    fstar = commands.add_parser('fstar', help='Estimate and cache f*')
    _add_run_flags(fstar)
    fstar.add_argument('--fstar-passes', type=float)
    fstar.set_defaults(handler=cmd_fstar)
    return parser


def main(argv: Optional[Sequence[str]] = None, service: Optional[SolverDefaultsService] = None) -> int:
    """Parse argv, run the command and map errors to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    level = (args.log_level or os.environ.get(LOG_LEVEL_ENV) or 'INFO').upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)

    try:
        return args.handler(args, service or get_defaults_service())
    except DivergenceError as e:
        logger.error(f"Run diverged: {e}")
        return EXIT_DIVERGENCE
    except AsyncWorkerError as e:
        logger.error(f"Worker failure: {e}")
        return EXIT_WORKER_FAILURE
    except (ValueError, ConfigurationError, FileNotFoundError, VerificationError) as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
