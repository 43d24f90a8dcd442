"""Exact solutions on the unit square, error norms, rate fitting and the
experiments that measure optimal and non-optimal convergence.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import CoefficientField
from .exceptions import FVHeatError, InvalidParameterError
from .mesh import Mesh, generate
from .operators import (FVESystem, discrete_operator_apply, eigendecompose, interpolate,
                        l2_project, qh_apply, ritz_project)
from .quadrature import physical_points, triangle_rule
from .timestepping import Propagator, TimeGrid, backward_euler, crank_nicolson

CSV_COLUMNS = ("family", "scheme", "N", "h", "k", "t", "err_l2", "err_h1", "probe",
               "rate_l2", "rate_h1", "rate_probe", "seconds")


# ---------------------------------------------------------------------------
# exact solutions


class ExactSolution(NamedTuple):
    value: Callable
    grad: Callable


@dataclass(frozen=True)
class EigenSeriesData:
    """Initial data sum c_mn phi_mn with phi_mn = 2 sin(m pi x) sin(n pi y)."""

    terms: tuple

    def __post_init__(self):
        terms = tuple((int(m), int(n), float(c)) for m, n, c in self.terms)
        if any(m < 1 or n < 1 for m, n, _ in terms):
            raise InvalidParameterError("mode indices must be positive")
        if not all(math.isfinite(c) for _, _, c in terms):
            raise InvalidParameterError("coefficients must be finite")
        object.__setattr__(self, "terms", terms)

    @staticmethod
    def eigenvalue(m, n) -> float:
        return (m * m + n * n) * math.pi ** 2

    @classmethod
    def first_mode(cls) -> "EigenSeriesData":
        return cls(((1, 1, 1.0),))

    @classmethod
    def random(cls, modes: int = 6, seed: int = 0, decay: float = 0.0) -> "EigenSeriesData":
        """Random coefficients on the modes m, n <= ``modes``, scaled by lambda^(-decay/2)."""
        rng = np.random.default_rng(seed)
        terms = []
        for m in range(1, modes + 1):
            for n in range(1, modes + 1):
                terms.append((m, n, rng.standard_normal() * cls.eigenvalue(m, n) ** (-decay / 2)))
        return cls(tuple(terms))

    def at(self, t: float) -> "EigenSeriesData":
        return EigenSeriesData(tuple((m, n, c * math.exp(-self.eigenvalue(m, n) * t))
                                     for m, n, c in self.terms))

    def seminorm(self, q: float) -> float:
        """|v|_q = (sum lambda^q c^2)^(1/2)."""
        return math.sqrt(sum(self.eigenvalue(m, n) ** q * c * c for m, n, c in self.terms))

    def __call__(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape)
        for m, n, c in self.terms:
            out += 2.0 * c * np.sin(m * np.pi * x) * np.sin(n * np.pi * y)
        return out

    def grad(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        gx = np.zeros(np.broadcast(x, y).shape)
        gy = np.zeros_like(gx)
        for m, n, c in self.terms:
            gx += 2.0 * c * m * np.pi * np.cos(m * np.pi * x) * np.sin(n * np.pi * y)
            gy += 2.0 * c * n * np.pi * np.sin(m * np.pi * x) * np.cos(n * np.pi * y)
        return gx, gy

    def neg_laplacian(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape)
        for m, n, c in self.terms:
            out += 2.0 * c * self.eigenvalue(m, n) * np.sin(m * np.pi * x) * np.sin(n * np.pi * y)
        return out


def exact_solution(series: EigenSeriesData, t: float) -> ExactSolution:
    """u(t) = sum c e^{-lambda t} phi and its gradient."""
    if t < 0:
        raise InvalidParameterError("t must be nonnegative")
    s = series.at(t)
    return ExactSolution(s, s.grad)


@dataclass(frozen=True)
class ManufacturedProblem:
    """Variable-coefficient problem whose solution is exp(-mu t) phi_11.

    With alpha = diag(1 + c sin^2(pi x), 1 + c sin^2(pi y)) and
    beta = 1 + 3 c pi^2 (cos^2(pi x) + cos^2(pi y)) one checks
    -div(alpha grad phi_11) + beta phi_11 = mu phi_11, mu = 2 pi^2 (1 + c) + 1.
    """

    c: float = 0.5

    @property
    def mu(self) -> float:
        return 2.0 * math.pi ** 2 * (1.0 + self.c) + 1.0

    @property
    def coefficients(self) -> CoefficientField:
        c = self.c

        def alpha(x, y):
            a = np.zeros(np.broadcast(x, y).shape + (2, 2))
            a[..., 0, 0] = 1.0 + c * np.sin(np.pi * x) ** 2
            a[..., 1, 1] = 1.0 + c * np.sin(np.pi * y) ** 2
            return a

        def beta(x, y):
            return 1.0 + 3.0 * c * math.pi ** 2 * (np.cos(np.pi * x) ** 2 + np.cos(np.pi * y) ** 2)

        return CoefficientField(alpha, beta)

    @property
    def initial(self) -> EigenSeriesData:
        return EigenSeriesData.first_mode()

    def solution(self, t: float) -> ExactSolution:
        s = EigenSeriesData(((1, 1, math.exp(-self.mu * t)),))
        return ExactSolution(s, s.grad)


def random_l2_data(cells: int = 8, seed: int = 0) -> Callable:
    """Piecewise constant N(0, 1) values on a cells x cells grid of the unit square."""
    vals = np.random.default_rng(seed).standard_normal((cells, cells))

    def f(x, y):
        i = np.clip(np.floor(np.asarray(x) * cells).astype(int), 0, cells - 1)
        j = np.clip(np.floor(np.asarray(y) * cells).astype(int), 0, cells - 1)
        return vals[j, i]

    f.cells = cells
    return f


# ---------------------------------------------------------------------------
# norms and rates


def error_norms(mesh: Mesh, u_h, exact, quad_order: int = 4):
    """(||u_h - u||, ||grad(u_h - u)||) by element quadrature; ``exact`` is (value, grad)."""
    value, grad = exact
    bary, w = triangle_rule(quad_order)
    pts = physical_points(mesh.corners, bary)
    uh = mesh.extend(u_h)[mesh.triangles]
    uh_q = uh @ bary.T
    guh = np.einsum("tk,tkd->td", uh, mesh.grad_basis)
    x, y = pts[..., 0], pts[..., 1]
    e = uh_q - np.broadcast_to(value(x, y), x.shape)
    gx, gy = grad(x, y)
    ex = guh[:, None, 0] - gx
    ey = guh[:, None, 1] - gy
    l2 = float(np.sqrt(mesh.areas @ ((e * e) @ w)))
    h1 = float(np.sqrt(mesh.areas @ ((ex * ex + ey * ey) @ w)))
    return l2, h1


def successive_rates(h, e) -> np.ndarray:
    """log(e_i / e_{i+1}) / log(h_i / h_{i+1}); first entry is NaN."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(e, dtype=float)
    r = np.full(len(h), np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        r[1:] = np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])
    return r


def fit_rate(h, e, levels: Optional[int] = 3) -> float:
    """Least-squares slope of log e against log h over the last ``levels`` points."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(e, dtype=float)
    if levels:
        h, e = h[-levels:], e[-levels:]
    if len(h) < 2:
        raise InvalidParameterError("need at least two levels to fit a rate")
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


# ---------------------------------------------------------------------------
# nonsmooth-data probe


def first_mode_slope(x, y):
    """grad phi_1 . (3, -1) for phi_1 = 2 sin(pi x) sin(pi y)."""
    return 2 * np.pi * (3 * np.cos(np.pi * x) * np.sin(np.pi * y)
                        - np.sin(np.pi * x) * np.cos(np.pi * y))


@dataclass(frozen=True)
class ProbeConfig:
    """Probe square P = [1/4 - d, 1/4 + d]^2 and node pattern.

    ``pattern="stripes"`` selects grid nodes (x_{2j}, y_m) in P;
    ``pattern="interface"`` selects nodes on the line x = 1/4 in P.
    The constructor checks grad phi_1 . (3, -1) >= 1 on P.
    """

    pattern: str = "stripes"
    d: float = 0.06
    t: float = 0.1

    def __post_init__(self):
        if self.pattern not in ("stripes", "interface"):
            raise InvalidParameterError(f"unknown probe pattern {self.pattern!r}")
        if not 0 < self.d < 0.25:
            raise InvalidParameterError("probe half-width d must lie in (0, 1/4)")
        if not self.t > 0:
            raise InvalidParameterError("probe time must be positive")
        if self.min_slope() < 1.0:
            raise InvalidParameterError(
                f"grad phi_1 . (3,-1) drops to {self.min_slope():.3f} < 1 on P for d = {self.d}")

    def min_slope(self, samples: int = 201) -> float:
        s = np.linspace(0.25 - self.d, 0.25 + self.d, samples)
        X, Y = np.meshgrid(s, s)
        return float(first_mode_slope(X, Y).min())

    def contains(self, x, y):
        lo, hi = 0.25 - self.d - 1e-12, 0.25 + self.d + 1e-12
        return (x >= lo) & (x <= hi) & (y >= lo) & (y <= hi)


def probe_vector(mesh: Mesh, config: ProbeConfig) -> np.ndarray:
    """Sum of the nodal basis functions at the selected nodes of P."""
    if "x" not in mesh.meta:
        raise InvalidParameterError("probe vectors need a tensor-grid mesh")
    xs = np.asarray(mesh.meta["x"])
    ys = np.asarray(mesh.meta["y"])
    if config.pattern == "stripes":
        cols = np.arange(0, len(xs), 2)
    else:
        cols = np.flatnonzero(np.abs(xs - 0.25) < 1e-12)
        if not cols.size:
            raise InvalidParameterError("mesh has no grid line at x = 1/4")
    v = np.zeros(mesh.n_dofs)
    for j in cols:
        for m in range(len(ys)):
            z = m * len(xs) + j
            dof = mesh.interior_index[z]
            if dof >= 0 and config.contains(xs[j], ys[m]):
                v[dof] = 1.0
    if not v.any():
        raise InvalidParameterError("probe node set is empty (mesh too coarse or d too small)")
    return v


def probe_quantity(system: FVESystem, v_h, t: float, propagator: Optional[Propagator] = None,
                   generalized: Optional[bool] = None) -> float:
    """||E~_h(t) Delta~_h Q_h v_h|| / ||v_h|| (L2 norms)."""
    if not t > 0:
        raise InvalidParameterError("t must be positive")
    propagator = propagator or Propagator(system, generalized=generalized)
    w = qh_apply(system, v_h, generalized)
    z = discrete_operator_apply(system, w, generalized)
    return system.l2_norm(propagator.propagate(z, t)) / system.l2_norm(v_h)


@dataclass
class QhNormEstimate:
    value: float
    iterations: int
    converged: bool


def qh_norm_estimate(system: FVESystem, max_iter: int = 500, tol: float = 1e-7, seed: int = 0,
                     generalized: Optional[bool] = None) -> QhNormEstimate:
    """Power iteration for sup ||Q_h psi|| / ||psi|| in the L2 (mass) metric.

    Iterates psi <- M^{-1} Q^T M Q psi with Q = A^{-1} (M~ - M), the
    L2-adjoint composition, from a seeded random start.
    """
    A = spla.splu(system.stiffness(generalized).tocsc())
    Mlu = spla.splu(system.mass.tocsc())
    E = system.quadrature_error
    M = system.mass
    x = np.random.default_rng(seed).standard_normal(system.n_dofs)
    x /= system.l2_norm(x)
    est = 0.0
    for it in range(1, max_iter + 1):
        y = A.solve(E @ x)
        new = system.l2_norm(y)
        z = Mlu.solve(E @ A.solve(M @ y))
        x = z / system.l2_norm(z)
        if abs(new - est) <= tol * new:
            return QhNormEstimate(new, it, True)
        est = new
    return QhNormEstimate(est, max_iter, False)


def norm_equivalence(system: FVESystem, samples: int = 1000, seed: int = 0, chunk: int = 100):
    """Observed (min, max) of |||chi||| / ||chi|| over random nodal vectors."""
    rng = np.random.default_rng(seed)
    lo, hi = np.inf, 0.0
    for start in range(0, samples, chunk):
        X = rng.standard_normal((system.n_dofs, min(chunk, samples - start)))
        fv = np.einsum("ij,ij->j", X, system.fv_mass @ X)
        l2 = np.einsum("ij,ij->j", X, system.mass @ X)
        r = np.sqrt(fv / l2)
        lo, hi = min(lo, r.min()), max(hi, r.max())
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# convergence tables


@dataclass
class ConvergenceTable:
    """Rows keyed by refinement level, with successive and fitted rates."""

    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    fit_levels: int = 3
    against: str = "h"

    def add(self, **row):
        full = {c: None for c in CSV_COLUMNS}
        full.update(row)
        self.rows.append(full)
        self.rows.sort(key=lambda r: -r[self.against])
        self._update_rates()

    def _update_rates(self):
        x = [r[self.against] for r in self.rows]
        for col in ("l2", "h1", "probe"):
            src = "probe" if col == "probe" else f"err_{col}"
            vals = [r[src] for r in self.rows]
            if any(v is None for v in vals):
                continue
            for r, rate in zip(self.rows, successive_rates(x, vals)):
                r[f"rate_{col}"] = None if np.isnan(rate) else float(rate)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def fitted_rate(self, column: str = "err_l2", levels: Optional[int] = None) -> float:
        return fit_rate(self.column(self.against), self.column(column), levels or self.fit_levels)

    def fitted_rates(self) -> dict:
        out = {}
        for col in ("err_l2", "err_h1", "probe"):
            vals = [r[col] for r in self.rows]
            if len(vals) >= 2 and all(v is not None for v in vals):
                out[col] = self.fitted_rate(col)
        return out

    @staticmethod
    def _fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    def to_csv(self, path=None, timing: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([self._fmt(r[c]) if (c != "seconds" or timing) else "" for c in CSV_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_json(self, path=None, timing: bool = False) -> str:
        rows = [{c: (r[c] if (c != "seconds" or timing) else None) for c in CSV_COLUMNS}
                for r in self.rows]
        doc = {"rows": rows, "fitted_rates": self.fitted_rates(), "fit_levels": self.fit_levels,
               "against": self.against, "meta": self.meta}
        text = json.dumps(doc, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def make_mesh(family: str, level: int, seed: int = 0, amplitude: float = 1.0,
              layout="halves") -> Mesh:
    """Mesh of a family at a sweep level (N, or J for the interface family)."""
    key = "J" if family in ("interface", "counterexample_interface") else "N"
    return generate(family, **{key: level}, seed=seed, amplitude=amplitude, layout=layout)


def initial_data(system: FVESystem, v, choice: str) -> np.ndarray:
    if choice == "ritz":
        return ritz_project(system, v)
    if choice == "l2":
        return l2_project(system, v)
    if choice == "interp":
        return interpolate(system.mesh, v)
    raise InvalidParameterError(f"unknown initial-data choice {choice!r} (ritz, l2, interp)")


SCHEMES = ("semidiscrete", "be", "cn", "cn-be")


def evolve(system: FVESystem, v_h, scheme: str, t: float, k: Optional[float] = None,
           propagator: str = "auto", tol: float = 1e-8) -> np.ndarray:
    """Advance ``v_h`` to time ``t`` with the named scheme."""
    if scheme == "semidiscrete":
        return Propagator(system, propagator, tol).propagate(v_h, t)
    if scheme not in SCHEMES:
        raise InvalidParameterError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if k is None:
        raise InvalidParameterError(f"scheme {scheme!r} needs a time step k")
    grid = TimeGrid.reaching(t, k)
    if scheme == "be":
        return backward_euler(system, v_h, grid)
    return crank_nicolson(system, v_h, grid, be_start_steps=2 if scheme == "cn-be" else 0)


def _problem(data: str, coefficients=None):
    """(initial data, exact-solution factory, coefficients) for a named data set."""
    if data == "smooth":
        series = EigenSeriesData.first_mode()
        return series, (lambda t: exact_solution(series, t)), coefficients
    if data == "smooth-general":
        prob = ManufacturedProblem()
        return prob.initial, prob.solution, prob.coefficients
    raise InvalidParameterError(f"unknown data set {data!r} (smooth, smooth-general)")


def convergence_study(family: str = "symmetric", sweep: Sequence[int] = (8, 16, 32, 64),
                      data: str = "smooth", initial: str = "ritz", scheme: str = "semidiscrete",
                      t: float = 0.1, k: Optional[float] = None,
                      coefficients: Optional[CoefficientField] = None, seed: int = 0,
                      amplitude: float = 1.0, propagator: str = "auto", tol: float = 1e-8,
                      quad_order: int = 4, fit_levels: int = 3, jobs: int = 1) -> ConvergenceTable:
    """Errors against the exact solution at time ``t`` over a mesh sweep."""
    _, _, coeffs = _problem(data, coefficients)
    cells = [dict(family=family, level=n, data=data, coeffs=coefficients, initial=initial,
                  scheme=scheme, t=t, k=k, seed=seed, amplitude=amplitude, propagator=propagator,
                  tol=tol, quad_order=quad_order) for n in sweep]
    table = ConvergenceTable(fit_levels=fit_levels)
    table.meta.update(kind="convergence", data=data, initial=initial,
                      operator="general" if coeffs is not None else "laplacian")
    stability = {}
    for row, extra in _run_cells(_convergence_cell, cells, jobs):
        if "error" in row:
            table.meta.setdefault("failed", []).append(row)
            continue
        table.add(**row)
        stability[row["N"]] = extra
    if initial == "l2":
        table.meta["grad_P_h_v_over_v_1"] = stability
    return table


def _convergence_cell(cell):
    t0 = time.perf_counter()
    mesh = make_mesh(cell["family"], cell["level"], cell["seed"], cell["amplitude"])
    v, exact_at, coeffs = _problem(cell["data"], cell["coeffs"])
    system = FVESystem(mesh, coeffs, quad_order=cell["quad_order"])
    v_h = initial_data(system, v, cell["initial"])
    u_h = evolve(system, v_h, cell["scheme"], cell["t"], cell["k"], cell["propagator"], cell["tol"])
    l2, h1 = error_norms(mesh, u_h, exact_at(cell["t"]), cell["quad_order"])
    extra = system.h1_seminorm(v_h) / v.seminorm(1) if cell["initial"] == "l2" else None
    row = dict(family=cell["family"], scheme=cell["scheme"], N=cell["level"], h=mesh.h_max,
               k=cell["k"], t=cell["t"], err_l2=l2, err_h1=h1,
               seconds=time.perf_counter() - t0)
    return row, extra


def temporal_study(family: str = "symmetric", level: int = 64,
                   ks: Sequence[float] = (1 / 10, 1 / 20, 1 / 40, 1 / 80), scheme: str = "be",
                   data: str = "smooth", initial: str = "ritz", t: float = 0.5,
                   v_h=None, seed: int = 0, amplitude: float = 1.0,
                   fit_levels: int = 3, tol: float = 1e-8) -> ConvergenceTable:
    """Fully discrete error against the semidiscrete solution on the same mesh.

    With the spatial mesh fixed, the reference isolates the time
    discretisation error. ``v_h`` overrides the initial data when given.
    """
    mesh = make_mesh(family, level, seed, amplitude)
    v, _, coeffs = _problem(data)
    system = FVESystem(mesh, coeffs)
    if v_h is None:
        v_h = initial_data(system, v, initial)
    reference = Propagator(system, "eigen", tol=min(tol, 1e-12)).propagate(v_h, t)
    table = ConvergenceTable(fit_levels=fit_levels, against="k")
    table.meta.update(kind="temporal", reference="semidiscrete modal solution")
    for k in ks:
        t0 = time.perf_counter()
        u = evolve(system, v_h, scheme, t, k)
        err = system.l2_norm(u - reference)
        table.add(family=family, scheme=scheme, N=level, h=mesh.h_max, k=float(k), t=t,
                  err_l2=err, err_h1=system.h1_seminorm(u - reference),
                  seconds=time.perf_counter() - t0)
    return table


def probe_study(family: str = "stripes", sweep: Sequence[int] = (16, 32, 64, 128),
                pattern: Optional[str] = None, t: float = 0.1, d: float = 0.06, seed: int = 0,
                amplitude: float = 1.0, propagator: str = "auto", tol: float = 1e-8,
                random_cells: int = 8, fit_levels: int = 3, jobs: int = 1) -> ConvergenceTable:
    """Probe quantity over a mesh sweep.

    ``pattern`` is ``"stripes"``, ``"interface"`` or ``"random-l2"`` (v_h =
    P_h of fixed piecewise-constant random data); it defaults to the
    pattern matching the family.
    """
    if pattern is None:
        pattern = {"interface": "interface", "counterexample_interface": "interface"}.get(
            family, "stripes" if family in ("stripes", "counterexample_stripes") else "random-l2")
    cells = [dict(family=family, level=n, pattern=pattern, t=t, d=d, seed=seed,
                  amplitude=amplitude, propagator=propagator, tol=tol, cells=random_cells)
             for n in sweep]
    table = ConvergenceTable(fit_levels=fit_levels)
    table.meta.update(kind="probe", pattern=pattern, d=d)
    counts = {}
    for row, extra in _run_cells(_probe_cell, cells, jobs):
        if "error" in row:
            table.meta.setdefault("failed", []).append(row)
            continue
        table.add(**row)
        counts[row["N"]] = extra
    table.meta["probe_nodes"] = counts
    return table


def _probe_cell(cell):
    t0 = time.perf_counter()
    mesh = make_mesh(cell["family"], cell["level"], cell["seed"], cell["amplitude"])
    system = FVESystem(mesh)
    if cell["pattern"] == "random-l2":
        v_h = l2_project(system, random_l2_data(cell["cells"], cell["seed"]))
        nodes = None
    else:
        v_h = probe_vector(mesh, ProbeConfig(cell["pattern"], cell["d"], cell["t"]))
        nodes = int(v_h.sum())
    prop = Propagator(system, cell["propagator"], cell["tol"])
    q = probe_quantity(system, v_h, cell["t"], prop)
    row = dict(family=cell["family"], scheme=f"probe-{prop.last_method}", N=cell["level"],
               h=mesh.h_max, t=cell["t"], probe=q, seconds=time.perf_counter() - t0)
    return row, nodes


def qnorm_study(family: str = "symmetric", sweep: Sequence[int] = (8, 16, 32, 64), seed: int = 0,
                amplitude: float = 1.0, max_iter: int = 500, fit_levels: int = 3,
                jobs: int = 1) -> ConvergenceTable:
    """Estimated ||Q_h|| (L2 operator norm) over a mesh sweep, in the ``probe`` column."""
    cells = [dict(family=family, level=n, seed=seed, amplitude=amplitude, max_iter=max_iter)
             for n in sweep]
    table = ConvergenceTable(fit_levels=fit_levels)
    table.meta.update(kind="qnorm")
    conv = {}
    for row, extra in _run_cells(_qnorm_cell, cells, jobs):
        if "error" in row:
            table.meta.setdefault("failed", []).append(row)
            continue
        table.add(**row)
        conv[row["N"]] = extra
    table.meta["power_iteration"] = conv
    return table


def _qnorm_cell(cell):
    t0 = time.perf_counter()
    mesh = make_mesh(cell["family"], cell["level"], cell["seed"], cell["amplitude"])
    est = qh_norm_estimate(FVESystem(mesh), max_iter=cell["max_iter"], seed=cell["seed"])
    row = dict(family=cell["family"], scheme="qnorm", N=cell["level"], h=mesh.h_max,
               probe=est.value, seconds=time.perf_counter() - t0)
    return row, {"iterations": est.iterations, "converged": est.converged}


def _guarded(fn, cell):
    try:
        return fn(cell)
    except FVHeatError as err:
        return {"N": cell["level"], "error": str(err)}, None


def _run_cells(fn, cells, jobs):
    """Run independent sweep cells, optionally in a process pool; results keep input order."""
    if jobs and jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_guarded, [fn] * len(cells), cells))
    return [_guarded(fn, c) for c in cells]


# ---------------------------------------------------------------------------
# invariant checks


def check_invariants(mesh: Mesh, coefficients: Optional[CoefficientField] = None,
                     samples: int = 20, seed: int = 0) -> dict:
    """Numerical invariants of the discrete operators on one mesh.

    Returns ``{name: (measured, threshold, passed)}``.
    """
    system = FVESystem(mesh, coefficients)
    rng = np.random.default_rng(seed)
    out = {}
    lo, hi = norm_equivalence(system, seed=seed)
    out["norm_equivalence_min"] = (lo, 0.5, lo >= 0.5)
    out["norm_equivalence_max"] = (hi, 1.5, hi <= 1.5)

    worst = 0.0
    for _ in range(samples):
        u, w = rng.standard_normal((2, system.n_dofs))
        lu = discrete_operator_apply(system, u)
        lw = discrete_operator_apply(system, w)
        gap = abs(lu @ (system.fv_mass @ w) - u @ (system.fv_mass @ lw))
        worst = max(worst, gap / (system.l2_norm(u) * system.l2_norm(w)))
    out["self_adjointness"] = (worst, 1e-10, worst <= 1e-10)

    count = None if system.n_dofs <= 1600 else 24
    dec = eigendecompose(system, count)
    res = float(dec.residuals.max())
    out["eigen_residual"] = (res, 1e-10, res <= 1e-10)
    G = dec.vectors.T @ (system.fv_mass @ dec.vectors)
    ortho = float(np.abs(G - np.eye(dec.count)).max())
    out["eigen_orthonormality"] = (ortho, 1e-10, ortho <= 1e-10)

    worst = 0.0
    for _ in range(samples):
        psi, chi = rng.standard_normal((2, system.n_dofs))
        q = qh_apply(system, psi)
        lhs = chi @ (system.operator @ q)
        rhs = psi @ (system.quadrature_error @ chi)
        worst = max(worst, abs(lhs - rhs))
    out["qh_residual"] = (worst, 1e-10, worst <= 1e-10)
    return out
