"""Time evolution of the semidiscrete problem u_t + A~_h u = 0.

The same code serves the Laplacian and the general operator: the stepping
matrices are built from ``system.fv_mass`` and ``system.stiffness(...)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse.linalg as spla

from .exceptions import InvalidParameterError, NumericalError
from .operators import (DENSE_EIGEN_MAX, FVESystem, cached_eigendecomposition,
                        eigendecompose)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform steps t_n = n k, n = 0..steps."""

    k: float
    steps: int

    def __post_init__(self):
        if not self.k > 0:
            raise InvalidParameterError(f"time step must be positive, got {self.k}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise InvalidParameterError(f"step count must be a nonnegative integer, got {self.steps}")

    @property
    def final_time(self) -> float:
        return self.steps * self.k

    @classmethod
    def reaching(cls, t: float, k: float) -> "TimeGrid":
        """Grid with step ``k`` ending at ``t``; n k must equal t to 1e-14."""
        if not k > 0:
            raise InvalidParameterError(f"time step must be positive, got {k}")
        n = int(round(t / k))
        if abs(n * k - t) > 1e-14 * max(1.0, abs(t)):
            raise InvalidParameterError(f"t = {t} is not a whole number of steps k = {k}")
        return cls(k, n)

    @classmethod
    def with_steps(cls, t: float, steps: int) -> "TimeGrid":
        return cls(t / steps, steps)


class _Stepper:
    """Factorised (M~ + theta k A) for one (k, theta) pair."""

    def __init__(self, system: FVESystem, k: float, theta: float, generalized):
        A = system.stiffness(generalized)
        Mt = system.fv_mass
        self.lhs = spla.splu((Mt + (theta * k) * A).tocsc())
        self.rhs = (Mt - ((1.0 - theta) * k) * A).tocsr()

    def __call__(self, u):
        return self.lhs.solve(self.rhs @ u)


def _march(system, v, grid, thetas, generalized, trajectory):
    u = np.array(v, dtype=float)
    out = [u.copy()] if trajectory else None
    steppers = {}
    for n in range(grid.steps):
        theta = thetas(n)
        if theta not in steppers:
            steppers[theta] = _Stepper(system, grid.k, theta, generalized)
        u = steppers[theta](u)
        if trajectory:
            out.append(u.copy())
    return np.array(out) if trajectory else u


def backward_euler(system: FVESystem, v, grid: TimeGrid, generalized: Optional[bool] = None,
                   trajectory: bool = False) -> np.ndarray:
    """(M~ + k A) U^n = M~ U^{n-1}, U^0 = v. Returns U^N, or all steps if ``trajectory``."""
    return _march(system, v, grid, lambda n: 1.0, generalized, trajectory)


def crank_nicolson(system: FVESystem, v, grid: TimeGrid, be_start_steps: int = 0,
                   generalized: Optional[bool] = None, trajectory: bool = False) -> np.ndarray:
    """(M~ + k/2 A) U^n = (M~ - k/2 A) U^{n-1}; the first ``be_start_steps`` steps are backward Euler."""
    if be_start_steps not in (0, 2):
        raise InvalidParameterError(f"be_start_steps must be 0 or 2, got {be_start_steps}")
    return _march(system, v, grid, lambda n: 1.0 if n < be_start_steps else 0.5,
                  generalized, trajectory)


def be_factor(k, lam):
    return 1.0 / (1.0 + k * lam)


def cn_factor(k, lam):
    return (1.0 - 0.5 * k * lam) / (1.0 + 0.5 * k * lam)


class Propagator:
    """Semidiscrete solution operator E~_h(t) = exp(-t A~_h).

    ``method="eigen"`` sums the modal expansion. On large meshes only the
    lowest modes are computed; their number grows until the neglected tail,
    bounded by exp(-lambda_K t) |||v - P_K v|||, is below ``tol`` times the
    result. ``method="substep"`` runs Crank-Nicolson (two backward Euler
    start steps) and halves the step until two successive results differ by
    less than ``tol`` in L2. ``"auto"`` tries eigen and falls back to substep.
    """

    def __init__(self, system: FVESystem, method: str = "auto", tol: float = 1e-8,
                 generalized: Optional[bool] = None, dense_max: int = DENSE_EIGEN_MAX,
                 max_modes: int = 1024, initial_steps: int = 64, max_halvings: int = 14):
        if method not in ("auto", "eigen", "substep"):
            raise InvalidParameterError(f"unknown propagation method {method!r}")
        self.system = system
        self.method = method
        self.tol = tol
        self.generalized = system.generalized if generalized is None else generalized
        self.dense_max = dense_max
        self.max_modes = max_modes
        self.initial_steps = initial_steps
        self.max_halvings = max_halvings
        self.last_method = None

    def __call__(self, v, t):
        return self.propagate(v, t)

    def propagate(self, v, t: float) -> np.ndarray:
        if t < 0:
            raise InvalidParameterError(f"time must be nonnegative, got {t}")
        v = np.asarray(v, dtype=float)
        if t == 0:
            self.last_method = "identity"
            return v.copy()
        if self.method in ("auto", "eigen"):
            u = self._eigen(v, t)
            if u is not None:
                self.last_method = "eigen"
                return u
            log.info("modal propagation unavailable at %d dofs for t=%g; substepping instead",
                     self.system.n_dofs, t)
        self.last_method = "substep"
        return self._substep(v, t)

    def _eigen(self, v, t):
        system = self.system
        n = system.n_dofs
        if n <= self.dense_max:
            dec = cached_eigendecomposition(system, None, self.generalized)
            return dec.evolve(system.fv_mass, v, t)
        count = 32
        while count <= min(self.max_modes, n - 2):
            dec = cached_eigendecomposition(system, count, self.generalized)
            c = dec.coefficients(system.fv_mass, v)
            u = dec.vectors @ (np.exp(-dec.values * t) * c)
            tail = max(system.fv_norm(v) ** 2 - float(c @ c), 0.0) ** 0.5
            if math.exp(-dec.values[-1] * t) * tail <= 0.1 * self.tol * max(system.fv_norm(u), 1e-300):
                return u
            count *= 2
        return None

    def _substep(self, v, t):
        system = self.system
        steps = self.initial_steps
        prev = crank_nicolson(system, v, TimeGrid.with_steps(t, steps), 2, self.generalized)
        for _ in range(self.max_halvings):
            steps *= 2
            cur = crank_nicolson(system, v, TimeGrid.with_steps(t, steps), 2, self.generalized)
            change = system.l2_norm(cur - prev)
            if change <= self.tol * max(system.l2_norm(cur), 1e-300):
                return cur
            prev = cur
        raise NumericalError(f"substepping did not reach relative change {self.tol:.0e} "
                             f"with {steps} steps (last change {change:.2e})", residual=change)


def propagate(system: FVESystem, v, t: float, method: str = "auto", tol: float = 1e-8,
              generalized: Optional[bool] = None) -> np.ndarray:
    return Propagator(system, method, tol, generalized).propagate(v, t)


def semidiscrete_exact(system: FVESystem, v, t: float, generalized: Optional[bool] = None) -> np.ndarray:
    """Modal solution from a full dense decomposition (small meshes only)."""
    dec = eigendecompose(system, None, generalized)
    return dec.evolve(system.fv_mass, v, t)
