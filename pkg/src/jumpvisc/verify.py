"""Comparison-principle harness.

Discrete fields are classified as sub/supersolutions through the same
sparse operator the solver uses, with the inner-ball slack of the
(eps, delta) definition: +delta|beta|^2 for subsolutions, -delta|beta|^2 for
supersolutions.  Ordering checks then report whether sub <= super holds in
Omega given ordering outside it.  Also here: the C^2 weight s -> s^mu used
for unbounded domains, and the study comparing the (eps, delta) residual with
the full-integral residual as eps -> 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import DimensionMismatch, HypothesisNotMet
from .grid import GridField
from .levy import jet, levy_smooth, slack_moment
from .local_op import LocalOperator, NonlocalScalarMap, eval_local
from .measure import build_quadrature


@dataclass
class Classification:
    verdict: str
    worst_interior_residual: float
    exterior_ordering_ok: bool
    delta: float
    sub_residual: float
    super_residual: float
    witness: dict = dc_field(default_factory=dict)

    @property
    def is_sub(self):
        return self.verdict in ("subsolution", "solution")

    @property
    def is_super(self):
        return self.verdict in ("supersolution", "solution")

    def to_dict(self):
        return {"verdict": self.verdict, "worst_interior_residual": self.worst_interior_residual,
                "exterior_ordering_ok": self.exterior_ordering_ok, "delta": self.delta,
                "sub_residual": self.sub_residual, "super_residual": self.super_residual,
                "witness": self.witness}


def _point(spec, flat):
    return [float(c) for c in spec.grid.points[flat]]


def classify(spec, field: GridField, tol=1e-6, delta=0.0) -> Classification:
    """Sub: max R(+delta) <= tol.  Super: min R(-delta) >= -tol.

    The verdict is about Omega; ``exterior_ordering_ok`` reports u <= g
    (sub), u >= g (super) or both on the box nodes outside Omega.
    """
    if field.grid is not spec.grid:
        raise DimensionMismatch("field is defined on a different grid")
    disc = spec.discrete()
    rows = spec.grid.omega_index
    r_sub = disc.residual_rows(field.values, +delta)
    r_sup = disc.residual_rows(field.values, -delta) if delta else r_sub
    hi = float(np.max(r_sub)) if r_sub.size else 0.0
    lo = float(np.min(r_sup)) if r_sup.size else 0.0
    sub, sup = hi <= tol, lo >= -tol
    verdict = {(True, True): "solution", (True, False): "subsolution",
               (False, True): "supersolution", (False, False): "neither"}[(sub, sup)]
    ext = spec.grid.exterior_index
    gap = field.values[ext] - spec.grid.g_values
    ext_sub = bool(np.all(gap <= tol))
    ext_sup = bool(np.all(gap >= -tol))
    ext_ok = {"solution": ext_sub and ext_sup, "subsolution": ext_sub,
              "supersolution": ext_sup, "neither": False}[verdict]
    witness = {}
    if r_sub.size:
        witness["sub_x"] = _point(spec, rows[int(np.argmax(r_sub))])
        witness["super_x"] = _point(spec, rows[int(np.argmin(r_sup))])
    worst = max(hi, -lo)
    return Classification(verdict, worst, ext_ok, float(delta), hi, lo, witness)


@dataclass
class ComparisonReport:
    passed: bool
    max_violation: float
    witness: list | None
    margin: float

    def to_dict(self):
        return {"pass": self.passed, "max_violation": self.max_violation,
                "witness": self.witness, "margin": self.margin}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _ordering(spec, u_vals, v_vals, tol):
    rows = spec.grid.omega_index
    diff = u_vals[rows] - v_vals[rows]
    if not diff.size:
        return True, 0.0, None, 0.0
    k = int(np.argmax(diff))
    worst = float(diff[k])
    return worst <= tol, max(worst, 0.0), _point(spec, rows[k]), float(-worst)


def comparison_check(spec, u_field: GridField, v_field: GridField, tol=1e-6, delta=0.0,
                     class_tol=None) -> ComparisonReport:
    """u sub, v super, u <= v outside Omega  ==>  u <= v in Omega (checked).

    Raises HypothesisNotMet listing every failed hypothesis.
    """
    class_tol = tol if class_tol is None else class_tol
    failed = []
    cu = classify(spec, u_field, class_tol, delta)
    cv = classify(spec, v_field, class_tol, delta)
    if not cu.is_sub:
        failed.append(f"u is not a subsolution (max residual {cu.sub_residual:.3g})")
    if not cv.is_super:
        failed.append(f"v is not a supersolution (min residual {cv.super_residual:.3g})")
    ext = spec.grid.exterior_index
    out_gap = u_field.values[ext] - v_field.values[ext]
    if out_gap.size and float(np.max(out_gap)) > tol:
        k = int(np.argmax(out_gap))
        failed.append(f"u > v outside Omega at {_point(spec, ext[k])} by {float(out_gap[k]):.3g}")
    if failed:
        raise HypothesisNotMet(failed)
    ok, viol, wit, margin = _ordering(spec, u_field.values, v_field.values, tol)
    return ComparisonReport(ok, viol, wit, margin)


def parabolic_residuals(spec, traj, signed_delta=0.0):
    """a + F + max G(-I) at each step, with a the forward time difference."""
    disc = spec.discrete()
    rows = spec.grid.omega_index
    out = []
    for k in range(len(traj.fields) - 1):
        dt = traj.times[k + 1] - traj.times[k]
        a = (traj.fields[k + 1].values[rows] - traj.fields[k].values[rows]) / dt
        out.append(a + disc.residual_rows(traj.fields[k].values, signed_delta))
    return out


def evolution_comparison_check(spec, u_traj, v_traj, tol=1e-6, delta=0.0) -> ComparisonReport:
    """Ordering of two trajectories recorded at the same times."""
    if len(u_traj.times) != len(v_traj.times) or not np.allclose(u_traj.times, v_traj.times,
                                                                   rtol=1e-12, atol=0):
        raise ValueError("trajectories must share their time grid")
    failed = []
    ru = parabolic_residuals(spec, u_traj, +delta)
    rv = parabolic_residuals(spec, v_traj, -delta)
    hi = max((float(np.max(r)) for r in ru if r.size), default=0.0)
    lo = min((float(np.min(r)) for r in rv if r.size), default=0.0)
    if hi > tol:
        failed.append(f"u is not a parabolic subsolution (max residual {hi:.3g})")
    if lo < -tol:
        failed.append(f"v is not a parabolic supersolution (min residual {lo:.3g})")
    rows = spec.grid.omega_index
    ext = spec.grid.exterior_index
    d0 = u_traj.fields[0].values[rows] - v_traj.fields[0].values[rows]
    if d0.size and float(np.max(d0)) > tol:
        failed.append(f"u(0) > v(0) in Omega by {float(np.max(d0)):.3g}")
    out = max((float(np.max(fu.values[ext] - fv.values[ext]))
               for fu, fv in zip(u_traj.fields, v_traj.fields) if ext.size), default=-math.inf)
    if out > tol:
        failed.append(f"u > v outside Omega by {out:.3g}")
    if failed:
        raise HypothesisNotMet(failed)
    passed, worst, wit, margin = True, 0.0, None, math.inf
    for t, fu, fv in zip(u_traj.times, u_traj.fields, v_traj.fields):
        ok, viol, w, m = _ordering(spec, fu.values, fv.values, tol)
        if m < margin:
            margin, wit = m, (None if w is None else {"t": t, "x": w})
        if not ok:
            passed = False
        worst = max(worst, viol)
    return ComparisonReport(passed, worst, wit, margin)


# weight for unbounded domains ---------------------------------------------------


@dataclass(frozen=True)
class WeightFunction:
    """w(s) = r^mu P(s / r) on [0, r], s^mu beyond; P quintic with P(0) = P'(0) = 0."""

    r: float
    mu: float
    coeffs: tuple   # P(t) = sum_k coeffs[k] t^k, k = 0..5

    def __call__(self, s):
        return self.derivative(s, 0)

    def inner_derivative(self, s, order=0):
        """Derivative of the polynomial branch (also evaluated past r)."""
        poly = np.polynomial.Polynomial(self.coeffs)
        if order:
            poly = poly.deriv(order)
        return self.r ** (self.mu - order) * poly(np.asarray(s, float) / self.r)

    def derivative(self, s, order=0):
        s = np.asarray(s, float)
        r, mu = self.r, self.mu
        inner = self.inner_derivative(s, order)
        safe = np.where(s > 0, s, 1.0)
        fall = math.prod(mu - j for j in range(order))
        outer = fall * safe ** (mu - order)
        out = np.where(s >= r, outer, inner)
        return float(out) if out.ndim == 0 else out


def _quintic(mu, c):
    """P on [0, 1] with P(0)=P'(0)=0, P''(0)=c and C^2 contact with t^mu at 1."""
    a2 = c / 2.0
    # unknowns a3, a4, a5
    lhs = np.array([[1.0, 1.0, 1.0], [3.0, 4.0, 5.0], [6.0, 12.0, 20.0]])
    rhs = np.array([1.0 - a2, mu - 2 * a2, mu * (mu - 1) - 2 * a2])
    a3, a4, a5 = np.linalg.solve(lhs, rhs)
    return (0.0, 0.0, a2, float(a3), float(a4), float(a5))


_TS = np.linspace(0.0, 1.0, 20001)


def _admissible(coeffs):
    P = np.polynomial.Polynomial(coeffs)
    return bool(np.all(P(_TS) >= -1e-14) and np.all(P.deriv()(_TS) >= -1e-14))


def build_weight(r, mu) -> WeightFunction:
    """C^2 weight equal to s^mu for s >= r, nonnegative and nondecreasing."""
    if not r > 0:
        raise ValueError("r must be positive")
    if not 0 < mu < 2:
        raise ValueError("mu must lie in (0, 2)")
    if _admissible(_quintic(mu, 0.0)):
        return WeightFunction(float(r), float(mu), _quintic(mu, 0.0))
    grid = np.linspace(0.0, 40.0, 4001)
    prev = 0.0
    for c in grid[1:]:
        if _admissible(_quintic(mu, c)):
            lo, hi = prev, c
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if _admissible(_quintic(mu, mid)):
                    hi = mid
                else:
                    lo = mid
            return WeightFunction(float(r), float(mu), _quintic(mu, hi))
        prev = c
    raise ValueError(f"no admissible quintic for mu={mu}")  # pragma: no cover


def weight_for_kernel(kernel, mu) -> WeightFunction:
    """Weight with r = B3 * R."""
    c = kernel.constants
    return build_weight(c.B3 * c.R, mu)


# definition equivalence -----------------------------------------------------------


@dataclass(frozen=True)
class TestCase:
    name: str
    phi: object
    x: tuple
    grad: object = None
    hess: object = None


@dataclass
class EquivalenceTable:
    rows: list
    orders: dict

    def to_csv(self):
        out = ["case,eps,delta,residual_A,residual_C,gap"]
        for r in self.rows:
            out.append(f"{r['case']},{r['eps']:.17g},{r['delta']:.17g},{r['residual_A']:.17g},"
                       f"{r['residual_C']:.17g},{r['gap']:.17g}")
        return "\n".join(out) + "\n"


def gaussian_case(center=0.0, width=1.0, x=0.3, dim=1, name=None):
    c = np.atleast_1d(np.asarray(center, float)) * np.ones(dim)
    xx = np.atleast_1d(np.asarray(x, float)) * np.ones(dim)

    def phi(pts):
        d = np.asarray(pts, float).reshape(-1, dim) - c
        return np.exp(-np.sum(d * d, axis=1) / width ** 2)

    def grad(pt):
        d = np.asarray(pt, float) - c
        return -2.0 * d / width ** 2 * math.exp(-float(d @ d) / width ** 2)

    def hess(pt):
        d = np.asarray(pt, float) - c
        e = math.exp(-float(d @ d) / width ** 2)
        return e * (4.0 * np.outer(d, d) / width ** 4 - 2.0 * np.eye(dim) / width ** 2)

    return TestCase(name or f"gaussian_w{width:g}", phi, tuple(xx), grad, hess)


def constant_case(value=1.0, x=0.3, dim=1):
    xx = np.atleast_1d(np.asarray(x, float)) * np.ones(dim)
    return TestCase(f"constant_{value:g}",
                    lambda pts: np.full(np.asarray(pts).reshape(-1, dim).shape[0], float(value)),
                    tuple(xx), lambda pt: np.zeros(dim), lambda pt: np.zeros((dim, dim)))


def definition_equivalence_study(cases, kernel, measure, eps_grid=(0.2, 0.1, 0.05, 0.025, 0.0125),
                                 delta_grid=(0.0, 0.25, 0.5), local: LocalOperator | None = None,
                                 G: NonlocalScalarMap | None = None, z_max=200.0,
                                 eps_full=1e-5, nodes_per_shell=8) -> EquivalenceTable:
    """(eps, delta) residual against the full-integral residual, u = phi.

    residual_A(eps, delta) = F(x, phi, Dphi, D^2phi) + G(-I_A) where I_A keeps
    the Taylor model plus the subsolution slack delta|beta|^2 on |z| < eps;
    residual_C integrates everything (Taylor model only below ``eps_full``).
    ``orders[(case, delta)]`` lists log(gap_k / gap_k+1) / log(eps_k / eps_k+1)
    for delta > 0.
    """
    local = local or LocalOperator.linear(1.0)
    G = G or NonlocalScalarMap.identity()
    eps_grid = [float(e) for e in eps_grid]
    quads = {e: build_quadrature(measure, e, z_max, nodes_per_shell) for e in eps_grid}
    q_full = build_quadrature(measure, eps_full, z_max, nodes_per_shell)
    rows, orders = [], {}
    for case in cases:
        x = np.asarray(case.x, float)
        ux = float(np.asarray(case.phi(x[None]))[0])
        p, X = jet(case.phi, x, case.grad, case.hess)
        f_loc = eval_local(local, x, ux, p, X)
        full = levy_smooth(case.phi, x, kernel, measure, q_full, grad=case.grad, hess=case.hess,
                           check_integrable=False).value
        res_c = f_loc + float(G(np.array([-full]))[0])
        for delta in delta_grid:
            gaps = []
            for e in eps_grid:
                val = levy_smooth(case.phi, x, kernel, measure, quads[e], grad=case.grad,
                                  hess=case.hess, check_integrable=False, delta=delta).value
                res_a = f_loc + float(G(np.array([-val]))[0])
                gaps.append(res_a - res_c)
                rows.append({"case": case.name, "eps": e, "delta": float(delta),
                             "residual_A": res_a, "residual_C": res_c, "gap": res_a - res_c})
            if delta > 0:
                orders[(case.name, float(delta))] = [
                    math.log(abs(gaps[k]) / abs(gaps[k + 1])) / math.log(eps_grid[k] / eps_grid[k + 1])
                    for k in range(len(gaps) - 1) if gaps[k] != 0 and gaps[k + 1] != 0]
    return EquivalenceTable(rows, orders)


def slack_contraction(kernel, measure, x, p, eps, z_max=10.0):
    """int_{|z|<eps} |beta(x,p,z)|^2 dq for linear-map kernels."""
    q = build_quadrature(measure, eps, z_max)
    A = kernel.linear_maps(np.atleast_1d(np.asarray(x, float))[None],
                           np.atleast_1d(np.asarray(p, float))[None])[0]
    return slack_moment(q, A)


# truncated boxes for unbounded domains ----------------------------------------------


@dataclass
class BoxStudy:
    sizes: list
    verdicts: list
    margins: list

    @property
    def stable(self):
        return len(set(self.verdicts)) <= 1

    def to_dict(self):
        return {"sizes": self.sizes, "verdicts": self.verdicts, "margins": self.margins,
                "stable": self.stable}


def truncated_box_study(build_spec, sizes, bump=1e-3, tol=1e-6, solver_tol=1e-8):
    """Comparison verdicts for (solution - bump, solution + bump) on growing boxes.

    ``build_spec(L)`` returns a ProblemSpec whose Omega has size L.  The pass
    criterion for an unbounded domain is a verdict that does not change as
    L grows.
    """
    from .solver import solve_stationary

    verdicts, margins = [], []
    for L in sizes:
        spec = build_spec(L)
        u, _ = solve_stationary(spec, tol=solver_tol)
        rows = spec.grid.omega_index
        lo, hi = u.copy(), u.copy()
        lo.values[rows] -= bump
        hi.values[rows] += bump
        try:
            rep = comparison_check(spec, lo, hi, tol=tol)
            verdicts.append("pass" if rep.passed else "fail")
            margins.append(rep.margin)
        except HypothesisNotMet:
            verdicts.append("hypothesis")
            margins.append(float("nan"))
    return BoxStudy(list(sizes), verdicts, margins)
