"""
Solver Factory Module

Maps registered solver names to solver classes and builds them from merged
settings (defaults, run config, CLI flags). Every solver exposes the same
run() call so the CLI can treat them alike.

@version 0.1.0
@date October 2026
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Callable, Dict, Optional

import numpy as np

from async_engine import as_acc_svrg_async, asaga_async, derive_params_async, kromagnon_async
from glm_objective import Problem
from lagged_updates import lagged_update_baselines
from serial_solvers import (Budget, SolverResult, TraceRecord, derive_params_serial, saga_serial,
                            ss_acc_svrg, svrg_serial)

logger = logging.getLogger(__name__)

Callback = Optional[Callable[[TraceRecord, np.ndarray], None]]


class Solver(ABC):
    """Base class for all registered solvers."""

    name = ''
    threaded = False
    regularizer = 'sparse'

    def __init__(self, settings: Dict[str, Any]):
        self.settings = dict(settings)

    def epoch_length(self, p: Problem) -> int:
        m = self.settings.get('m')
        if m is not None:
            return int(m)
        return int(self.settings.get('epoch_multiplier', 2) * p.n)

    @property
    def seed(self) -> int:
        return int(self.settings.get('seed', 0))

    @property
    def threads(self) -> int:
        return int(self.settings.get('threads', 1))

    def step(self, p: Problem) -> Optional[float]:
        step = self.settings.get('step')
        return None if step is None else float(step)

    @abstractmethod
    def run(self, p: Problem, budget: Budget, f_star: float = 0.0, callback: Callback = None) -> SolverResult:
        """Run on p until the budget stops it."""
        pass

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.settings})"


class SSAccSVRGSolver(Solver):
    """Serial sparse accelerated SVRG"""
    name = 'ss_acc_svrg'

    def run(self, p, budget, f_star=0.0, callback=None):
        params = derive_params_serial(p.n, p.kappa, self.settings.get('omega', 50.0),
                                      m_override=self.epoch_length(p), L=p.L, seed=self.seed)
        return ss_acc_svrg(p, params, budget, f_star=f_star, callback=callback,
                           correction=bool(self.settings.get('correction', True)),
                           snapshot=self.settings.get('snapshot', 'random'))


class SVRGSolver(Solver):
    """Serial sparse SVRG"""
    name = 'svrg'

    def run(self, p, budget, f_star=0.0, callback=None):
        return svrg_serial(p, step=self.step(p), m=self.epoch_length(p), budget=budget, seed=self.seed,
                           step_const=float(self.settings.get('step_const', 4.0)), f_star=f_star,
                           callback=callback)


class SagaSolver(Solver):
    """Serial sparse SAGA"""
    name = 'saga'

    def run(self, p, budget, f_star=0.0, callback=None):
        return saga_serial(p, step=self.step(p), budget=budget, seed=self.seed,
                           step_const=float(self.settings.get('step_const', 3.0)), f_star=f_star,
                           callback=callback)


class KatyushaLaggedSolver(Solver):
    """Katyusha with lagged updates (dense regularizer)"""
    name = 'katyusha_lagged'
    regularizer = 'dense'
    method = 'katyusha'

    def run(self, p, budget, f_star=0.0, callback=None):
        return lagged_update_baselines(p, self.method, budget, seed=self.seed, f_star=f_star,
                                       callback=callback, omega=self.settings.get('omega', 50.0),
                                       m_override=self.epoch_length(p))


class SSAccSVRGLaggedSolver(KatyushaLaggedSolver):
    """Accelerated SVRG with lagged updates (dense regularizer)"""
    name = 'ss_acc_svrg_lagged'
    method = 'ss_acc_svrg'


class ASAccSVRGSolver(Solver):
    """Asynchronous sparse accelerated SVRG"""
    name = 'as_acc_svrg'
    threaded = True

    def run(self, p, budget, f_star=0.0, callback=None):
        params = derive_params_async(p.n, p.kappa, self.settings.get('omega', 50.0), delta=p.profile.delta,
                                     tau_tilde=float(self.settings.get('tau_tilde', 0.0)),
                                     m_override=self.epoch_length(p), L=p.L, seed=self.seed,
                                     async_constant=self.settings.get('async_constant'))
        return as_acc_svrg_async(p, params, self.threads, budget, f_star=f_star, callback=callback,
                                 track=bool(self.settings.get('track', False)))


class KroMagnonSolver(Solver):
    """Asynchronous sparse SVRG"""
    name = 'kromagnon'
    threaded = True

    def run(self, p, budget, f_star=0.0, callback=None):
        return kromagnon_async(p, step=self.step(p), workers=self.threads, budget=budget,
                               m=self.epoch_length(p), seed=self.seed,
                               step_const=float(self.settings.get('step_const', 2.0)), f_star=f_star,
                               callback=callback, track=bool(self.settings.get('track', False)))


class ASAGASolver(Solver):
    """Asynchronous sparse SAGA"""
    name = 'asaga'
    threaded = True

    def run(self, p, budget, f_star=0.0, callback=None):
        return asaga_async(p, step=self.step(p), workers=self.threads, budget=budget, seed=self.seed,
                           step_const=float(self.settings.get('step_const', 3.0)), f_star=f_star,
                           callback=callback)


# Map of solver names to their classes
SOLVER_MAP = {
    'ss_acc_svrg': SSAccSVRGSolver,
    'svrg': SVRGSolver,
    'saga': SagaSolver,
    'katyusha_lagged': KatyushaLaggedSolver,
    'ss_acc_svrg_lagged': SSAccSVRGLaggedSolver,
    'as_acc_svrg': ASAccSVRGSolver,
    'kromagnon': KroMagnonSolver,
    'asaga': ASAGASolver,
}


class SolverFactory:
    """Factory class to create the appropriate solver from its registered name"""

    @staticmethod
    def create_solver(name: str, settings: Optional[Dict[str, Any]] = None) -> Solver:
        """Create and return a solver.

        Args:
            name (str): Registered solver name
            settings (dict): Merged solver settings

        Returns:
            Solver: An instance of the registered solver class

        Raises:
            ValueError: If the name is unknown or the settings are invalid
        """
        if not name:
            logger.error("Empty solver name provided to SolverFactory")
            raise ValueError("Empty solver name provided")
        if name not in SOLVER_MAP:
            logger.error(f"Unknown solver: {name}")
            raise ValueError(f"Unknown solver: {name}. Choose one of {', '.join(sorted(SOLVER_MAP))}")

        settings = dict(settings or {})
        threads = settings.get('threads', 1)
        try:
            threads = int(threads)
        except (TypeError, ValueError):
            logger.error(f"Invalid thread count: {threads} (not a number)")
            raise ValueError(f"Invalid thread count: {threads}. Must be an integer.")
        if threads < 1:
            logger.error(f"Invalid thread count: {threads}")
            raise ValueError(f"Invalid thread count: {threads}. Must be at least 1.")
        solver_class = SOLVER_MAP[name]
        if threads > 1 and not solver_class.threaded:
            logger.warning(f"{name} is single-threaded; ignoring threads={threads}")
            threads = 1
        settings['threads'] = threads

        omega = settings.get('omega', 50.0)
        if omega is not None and float(omega) <= 1.0:
            logger.error(f"Invalid omega: {omega}")
            raise ValueError(f"omega must be greater than 1, got {omega}")
        for key in ('step_const', 'step', 'epoch_multiplier'):
            value = settings.get(key)
            if value is not None and float(value) <= 0.0:
                logger.error(f"Invalid {key}: {value}")
                raise ValueError(f"{key} must be positive, got {value}")

        logger.info(f"Creating solver: {name}")
        return solver_class(settings)
