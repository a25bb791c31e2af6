"""Monotone explicit solver for the stationary and evolutionary Dirichlet
problems

    F(x, u, Du, D^2u) + max_k G_k(-I_k[u]) = 0          in Omega,
    u_t + F(x, u, Du, D^2u) + max_k G_k(-I_k[u]) = 0    in (0, T) x Omega,

with u = g on the complement of Omega.  The stationary problem is marched to
steady state in pseudo-time.  Iterates start inside the Perron bounds
[m, M] and the time step is chosen so the update is monotone in every nodal
value, which keeps them there.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .errors import CflViolation, DimensionMismatch, HypothesisNotMet, MaxIterExceeded, UnboundedSearch
from .grid import Grid, GridField
from .kernel import JumpKernel, verify_growth
from .levy import assemble, difference_operators
from .local_op import LocalOperator, NonlocalScalarMap, eval_local_many
from .measure import AnnularQuadrature, LevyMeasure, check_integrability

SAFETY = 0.9
SEARCH_CAP = 1e12


@dataclass(frozen=True, eq=False)
class Term:
    """One nonlocal term G(-I[u]) with its kernel, measure and quadrature."""

    G: NonlocalScalarMap
    kernel: JumpKernel
    measure: LevyMeasure
    quad: AnnularQuadrature


@dataclass(eq=False)
class ProblemSpec:
    grid: Grid
    local: LocalOperator
    terms: list
    u0: Callable | None = None
    horizon: float | None = None
    validate: bool = True
    threads: int = 1
    _disc: object = dc_field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not self.terms:
            raise ValueError("need at least one nonlocal term")
        self.terms = list(self.terms)
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be positive")
        N = self.grid.dim
        for k, t in enumerate(self.terms):
            if t.kernel.dim_n != N:
                raise DimensionMismatch(f"term {k}: kernel acts on R^{t.kernel.dim_n}, grid is R^{N}")
            if not (t.measure.dim_m == t.quad.dim_m == t.kernel.dim_m):
                raise DimensionMismatch(f"term {k}: jump dimensions of kernel, measure and quadrature differ")
        if self.validate:
            failed = []
            for k, t in enumerate(self.terms):
                if not verify_growth(t.kernel, sample_budget=2000).passed:
                    failed.append(f"term {k}: kernel growth")
                if not check_integrability(t.measure).ok:
                    failed.append(f"term {k}: measure integrability")
            if failed:
                raise HypothesisNotMet(failed)

    @property
    def domain(self):
        return self.grid.domain

    def discrete(self) -> "_Discrete":
        if self._disc is None:
            self._disc = _Discrete(self)
        return self._disc


class _Discrete:
    """Cached sparse pieces of the scheme on the Omega rows."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        grid = spec.grid
        self.grid = grid
        self.rows = grid.omega_index
        self.xs = grid.points[self.rows]
        self.grad, self.hess = difference_operators(grid, self.rows)
        self.lap = sum(self.hess[d][d] for d in range(grid.dim))
        local = spec.local
        self.source = local.source(self.xs) if local.is_linear else None
        self.stencils = [None if t.kernel.gradient_dependent else
                         assemble(grid, t.kernel, t.quad, self.rows, threads=spec.threads)
                         for t in spec.terms]
        self._cfl = {}

    def gradients(self, values):
        return np.stack([g @ values for g in self.grad], axis=1)

    def hessians(self, values):
        N = self.grid.dim
        X = np.empty((len(self.rows), N, N))
        for d in range(N):
            for e in range(N):
                X[:, d, e] = self.hess[d][e] @ values
        return X

    def nonlocal_values(self, values, signed_delta=0.0):
        """I_k at the rows for every term (gradient frozen at ``values``)."""
        out = []
        ps = None
        for t, st in zip(self.spec.terms, self.stencils):
            if st is None:
                if ps is None:
                    ps = self.gradients(values)
                st = assemble(self.grid, t.kernel, t.quad, self.rows, ps=ps, threads=self.spec.threads)
            out.append(st.apply(values, signed_delta))
        return out

    def local_values(self, values):
        local = self.spec.local
        u = values[self.rows]
        if local.is_linear:
            out = local.gamma * u - self.source
            if local.c:
                out = out - local.c * (self.lap @ values)
            return out
        return eval_local_many(local, self.xs, u, self.gradients(values), self.hessians(values))

    def residual_rows(self, values, signed_delta=0.0):
        nl = self.nonlocal_values(values, signed_delta)
        g = np.max(np.stack([t.G(-I) for t, I in zip(self.spec.terms, nl)]), axis=0)
        return self.local_values(values) + g

    def center_bound(self):
        """Upper bound over rows and terms of -dI_i/du_i."""
        lam = 0.0
        for t, st in zip(self.spec.terms, self.stencils):
            if st is not None:
                lam = max(lam, float(np.max(st.center_bound)) if len(st.center_bound) else 0.0)
                continue
            q = t.quad
            env = t.kernel.envelope(self.xs)
            fro = min(t.kernel.dim_n, t.kernel.dim_m) * env ** 2
            bound = float(np.sum(q.weights)) \
                + q.exact_second_moment_inner / q.dim_m * fro / self.grid.h ** 2
            lam = max(lam, float(np.max(bound)) if len(bound) else 0.0)
        return lam


# Perron bounds ----------------------------------------------------------------


@dataclass(frozen=True)
class PerronBounds:
    m: float
    M: float


def _g0(spec):
    return max(float(np.asarray(t.G(np.zeros(1)))[0]) for t in spec.terms)


def _u0_values(spec):
    if spec.u0 is None:
        return np.zeros(0)
    return np.asarray(spec.u0(spec.grid.points[spec.grid.omega_index]), float)


def perron_bounds(spec: ProblemSpec) -> PerronBounds:
    """Constants M >= m with F(x,M,0,O) + G(0) >= 0 >= F(x,m,0,O) + G(0) on
    the Omega nodes, M above g and u0, m below them."""
    grid = spec.grid
    data = np.concatenate([grid.g_values, _u0_values(spec)])
    hi_data = float(np.max(data)) if data.size else -math.inf
    lo_data = float(np.min(data)) if data.size else math.inf
    g0 = _g0(spec)
    local = spec.local
    xs = grid.points[grid.omega_index]
    if local.is_linear:
        level = (local.source(xs) - g0) / local.gamma
        M = max(hi_data, float(np.max(level)) if level.size else -math.inf)
        m = min(lo_data, float(np.min(level)) if level.size else math.inf)
        if not math.isfinite(M):
            M = m = 0.0
        return PerronBounds(m, M)

    n = len(xs)
    O = np.zeros((n, grid.dim, grid.dim))
    P = np.zeros((n, grid.dim))

    def sup_ok(c):
        return bool(np.all(eval_local_many(local, xs, np.full(n, c), P, O) + g0 >= 0.0))

    def sub_ok(c):
        return bool(np.all(eval_local_many(local, xs, np.full(n, c), P, O) + g0 <= 0.0))

    start_hi = hi_data if math.isfinite(hi_data) else 0.0
    start_lo = lo_data if math.isfinite(lo_data) else 0.0
    M = _search(sup_ok, start_hi, +1)
    m = _search(sub_ok, start_lo, -1)
    return PerronBounds(m, M)


def _search(ok, start, direction, tol=1e-9):
    """Smallest (direction=+1) or largest (-1) admissible level beyond ``start``."""
    if ok(start):
        return start
    step = 1.0
    far = start + direction * step
    while not ok(far):
        step *= 2.0
        if step > SEARCH_CAP:
            raise UnboundedSearch("no Perron bound below the search cap")
        far = start + direction * step
    near = start
    while abs(far - near) > tol * max(1.0, abs(far)):
        mid = 0.5 * (near + far)
        if ok(mid):
            far = mid
        else:
            near = mid
    return far


# residual and time step -------------------------------------------------------


def residual(spec: ProblemSpec, field: GridField, signed_delta=0.0) -> np.ndarray:
    """R = F + max_k G_k(-I_k) at Omega nodes, 0 elsewhere."""
    if field.grid is not spec.grid:
        raise DimensionMismatch("field is defined on a different grid")
    out = np.zeros(spec.grid.size)
    out[spec.grid.omega_index] = spec.discrete().residual_rows(field.values, signed_delta)
    return out


def cfl_formula(gamma_r, c, h, dim, g_lip, lam, safety=SAFETY) -> float:
    """safety / (gamma + 2 N c / h^2 + G' lambda)."""
    return safety / (gamma_r + 2.0 * dim * c / h ** 2 + g_lip * lam)


def cfl_bound(spec: ProblemSpec, field_range=None) -> float:
    """Largest monotone explicit step for fields with values in ``field_range``."""
    disc = spec.discrete()
    if field_range is None:
        b = perron_bounds(spec)
        field_range = (b.m, b.M)
    key = (float(field_range[0]), float(field_range[1]))
    if key not in disc._cfl:
        lam = disc.center_bound()
        reach = max((key[1] - key[0]) * lam, 1e-6)
        g_lip = max(t.G.lipschitz((-reach, reach)) for t in spec.terms)
        local = spec.local
        disc._cfl[key] = cfl_formula(local.r_lipschitz, local.x_lipschitz, spec.grid.h,
                                     spec.grid.dim, g_lip, lam)
    return disc._cfl[key]


# reports ------------------------------------------------------------------------


@dataclass
class SolverReport:
    residual_sup: float
    iterations: int
    dt: float
    violations: int
    wall_ms: float
    bounds: PerronBounds
    converged: bool = True

    def to_dict(self, include_wall=True):
        d = {"residual_sup": self.residual_sup, "iterations": self.iterations, "dt": self.dt}
        if include_wall:
            d["wall_ms"] = self.wall_ms
        d["bounds"] = {"m": self.bounds.m, "M": self.bounds.M}
        d["violations"] = self.violations
        d["converged"] = self.converged
        return d

    def to_json(self, include_wall=True):
        return json.dumps(self.to_dict(include_wall), indent=2, sort_keys=True)


def initial_field(spec: ProblemSpec, bounds: PerronBounds | None = None, clamp=True) -> GridField:
    """u0 (or the extension of g) on Omega, projected onto [m, M]; g outside."""
    grid = spec.grid
    fn = spec.u0 if spec.u0 is not None else grid.g
    rng = None
    if clamp:
        bounds = bounds or perron_bounds(spec)
        rng = (bounds.m, bounds.M)
    return grid.field_from(fn, clamp=rng)


def _range_for(spec, bounds, values):
    return (min(bounds.m, float(np.min(values))), max(bounds.M, float(np.max(values))))


def step_explicit(spec: ProblemSpec, field: GridField, dt: float) -> GridField:
    """One explicit Euler step; Omega^c nodes are reset to g."""
    bounds = perron_bounds(spec)
    limit = cfl_bound(spec, _range_for(spec, bounds, field.values))
    if dt > limit * (1 + 1e-12):
        raise CflViolation(f"dt={dt:.6g} exceeds the monotone bound {limit:.6g}")
    new = field.copy()
    rows = spec.grid.omega_index
    new.values[rows] = field.values[rows] - dt * spec.discrete().residual_rows(field.values)
    return new.refresh_exterior()


def solve_stationary(spec: ProblemSpec, tol=1e-6, max_iter=200_000, init: GridField | None = None,
                     dt=None):
    """Pseudo-time march to ||R||_inf <= tol.  Returns (field, report)."""
    t0 = time.perf_counter()
    bounds = perron_bounds(spec)
    u = initial_field(spec, bounds) if init is None else init.copy().refresh_exterior()
    limit = cfl_bound(spec, _range_for(spec, bounds, u.values))
    if dt is None:
        dt = limit
    elif dt > limit * (1 + 1e-12):
        raise CflViolation(f"dt={dt:.6g} exceeds the monotone bound {limit:.6g}")
    disc = spec.discrete()
    rows = spec.grid.omega_index
    vals = u.values
    lo, hi = bounds.m - tol, bounds.M + tol
    violations = 0
    best, best_res = vals.copy(), math.inf
    it = 0
    while True:
        R = disc.residual_rows(vals)
        res = float(np.max(np.abs(R))) if R.size else 0.0
        if res < best_res:
            best, best_res = vals.copy(), res
        if res <= tol:
            break
        if it >= max_iter:
            report = SolverReport(best_res, it, dt, violations, _ms(t0), bounds, converged=False)
            raise MaxIterExceeded(f"residual {best_res:.3g} > tol after {it} iterations",
                                  GridField(spec.grid, best), report)
        vals[rows] -= dt * R
        violations += int(np.count_nonzero((vals[rows] < lo) | (vals[rows] > hi)))
        it += 1
    report = SolverReport(res, it, dt, violations, _ms(t0), bounds)
    return GridField(spec.grid, vals), report


def _ms(t0):
    return (time.perf_counter() - t0) * 1e3


@dataclass
class Trajectory:
    times: list
    fields: list
    final: GridField
    report: SolverReport


def solve_evolution(spec: ProblemSpec, horizon=None, dt=None, checkpoints=(), record_all=False,
                    init: GridField | None = None) -> Trajectory:
    """Explicit Euler on [0, T] from u0 (unclamped) with u = g outside Omega.

    The step is the monotone bound shrunk so an integer number of steps hits
    T exactly.  ``checkpoints`` are snapped to the nearest step.
    """
    t0 = time.perf_counter()
    T = horizon if horizon is not None else spec.horizon
    if T is None or not T > 0:
        raise ValueError("evolution needs a positive horizon")
    bounds = perron_bounds(spec)
    u = initial_field(spec, clamp=False) if init is None else init.copy().refresh_exterior()
    limit = cfl_bound(spec, _range_for(spec, bounds, u.values))
    if dt is None:
        dt = limit
    elif dt > limit * (1 + 1e-12):
        raise CflViolation(f"dt={dt:.6g} exceeds the monotone bound {limit:.6g}")
    n = max(1, math.ceil(T / dt - 1e-12))
    dt = T / n
    want = sorted({min(n, max(0, round(c / dt))) for c in checkpoints})
    disc = spec.discrete()
    rows = spec.grid.omega_index
    vals = u.values
    rng = _range_for(spec, bounds, vals)
    lo, hi = rng[0] - 1e-9, rng[1] + 1e-9
    times, fields = [], []
    violations = 0

    def record(k):
        times.append(k * dt)
        fields.append(GridField(spec.grid, vals.copy()))

    if record_all or 0 in want:
        record(0)
    res = 0.0
    for k in range(1, n + 1):
        R = disc.residual_rows(vals)
        res = float(np.max(np.abs(R))) if R.size else 0.0
        vals[rows] -= dt * R
        violations += int(np.count_nonzero((vals[rows] < lo) | (vals[rows] > hi)))
        if record_all or k in want:
            record(k)
    report = SolverReport(res, n, dt, violations, _ms(t0), bounds)
    return Trajectory(times, fields, GridField(spec.grid, vals), report)
