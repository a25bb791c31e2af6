import math

import numpy as np
import pytest
from conftest import linear_problem

from jumpvisc.errors import CflViolation, MaxIterExceeded
from jumpvisc.exprlang import ScalarField
from jumpvisc.grid import Domain, Grid
from jumpvisc.kernel import JumpKernel
from jumpvisc.local_op import LocalOperator, NonlocalScalarMap
from jumpvisc.measure import LevyMeasure, build_quadrature
from jumpvisc.solver import (
    PerronBounds,
    ProblemSpec,
    Term,
    cfl_bound,
    cfl_formula,
    initial_field,
    perron_bounds,
    residual,
    solve_evolution,
    solve_stationary,
    step_explicit,
)


def _mirror_gap(grid, values):
    u = values.reshape(grid.shape)
    return float(np.max(np.abs(u - u[::-1])))


def test_perron_examples(canonical):
    assert perron_bounds(canonical) == PerronBounds(0.0, 1.0)
    assert perron_bounds(linear_problem(n_cells=40, f=0.0)) == PerronBounds(0.0, 0.0)
    b = perron_bounds(linear_problem(n_cells=40, gamma=2.0, f=1.0, g=lambda p: np.full(len(p), 3.0)))
    assert b.M == 3.0 and b.m == 0.5


def test_perron_custom_operator_search():
    grid = Grid(Domain.interval(-1, 1, lambda p: np.zeros(len(p))), 40)
    m = LevyMeasure.power_law(1.0)
    term = Term(NonlocalScalarMap.identity(), JumpKernel.identity(1), m, build_quadrature(m, grid.h, 100.0))
    # F(x, r) = r + r^3 - 2 ; zero at r = 1
    op = LocalOperator.custom(lambda x, r, p, X: r + r ** 3 - 2.0, 1.0, lip_r=4.0)
    b = perron_bounds(ProblemSpec(grid, op, [term]))
    assert b.M == pytest.approx(1.0, abs=1e-8)
    assert b.m == 0.0


def test_residual_signs_at_perron_constants(canonical):
    b = perron_bounds(canonical)
    grid = canonical.grid
    up = grid.field_from(lambda p: np.full(len(p), b.M))
    lo = grid.field_from(lambda p: np.full(len(p), b.m))
    assert np.min(residual(canonical, up)) >= -1e-9
    assert np.max(residual(canonical, lo)) <= 1e-9


def test_cfl_examples():
    assert cfl_formula(1.0, 0.0, 0.1, 1, 1.0, 2.0) == pytest.approx(0.3)
    assert cfl_formula(2.0, 0.0, 0.1, 1, 1.0, 0.0) == pytest.approx(0.45)
    ratios = []
    for h in (0.1, 0.05, 0.025, 0.0125):
        ratios.append(cfl_formula(1.0, 1.0, h, 2, 1.0, 2.0))
    for a, b in zip(ratios, ratios[1:]):
        assert a / b == pytest.approx(4.0, rel=0.05)


def test_cfl_bound_quarters_with_diffusion():
    dts = []
    for n in (40, 80, 160):
        grid = Grid(Domain.interval(-1, 1, lambda p: np.zeros(len(p))), n)
        m = LevyMeasure.power_law(0.5)
        term = Term(NonlocalScalarMap.identity(), JumpKernel.identity(1), m,
                    build_quadrature(m, 0.5, 100.0))
        spec = ProblemSpec(grid, LocalOperator.linear(1.0, 1.0, 1.0), [term])
        dts.append(cfl_bound(spec))
    assert dts[1] / dts[2] == pytest.approx(4.0, rel=0.1)


def test_zero_problem():
    spec = linear_problem(n_cells=40, f=0.0)
    u, rep = solve_stationary(spec)
    assert rep.iterations <= 2
    assert np.all(u.values == 0.0)


def test_canonical_solution(canonical, canonical_solution):
    u, rep = canonical_solution
    rows = canonical.grid.omega_index
    assert rep.converged and rep.residual_sup <= 1e-6
    assert np.all(u.values[rows] >= 0.0) and np.all(u.values[rows] <= 1.0)
    assert _mirror_gap(canonical.grid, u.values) <= 1e-6
    assert rep.violations == 0
    assert np.max(np.abs(residual(canonical, u))) <= 1e-6


def test_self_convergence():
    sols = {}
    for n in (50, 100, 200):
        spec = linear_problem(n_cells=n)
        sols[n] = solve_stationary(spec, tol=1e-9)[0].values
    d1 = np.max(np.abs(sols[50] - sols[100][::2]))
    d2 = np.max(np.abs(sols[100] - sols[200][::2]))
    assert d2 < d1


def test_step_preserves_order(canonical):
    grid = canonical.grid
    dt = cfl_bound(canonical, (-3.0, 3.0))
    rng = np.random.default_rng(5)
    rows = grid.omega_index
    worst = 0.0
    for _ in range(100):
        u = grid.field_from(lambda p: rng.uniform(-1, 1, len(p)))
        v = u.copy()
        v.values[rows] += rng.uniform(0, 1, len(rows)) * (rng.random(len(rows)) < 0.5)
        a, b = step_explicit(canonical, u, dt), step_explicit(canonical, v, dt)
        worst = max(worst, float(np.max(a.values - b.values)))
    assert worst <= 1e-12


def test_step_rejects_large_dt(canonical):
    u = initial_field(canonical)
    with pytest.raises(CflViolation):
        step_explicit(canonical, u, 2 * cfl_bound(canonical))


def test_stationary_is_fixed_point(canonical, canonical_solution):
    u, _ = canonical_solution
    dt = cfl_bound(canonical)
    v = u
    for k in range(1, 11):
        v = step_explicit(canonical, v, dt)
        assert np.max(np.abs(v.values - u.values)) <= 1e-6 * k * dt


def test_supersolution_evolution_nonincreasing():
    spec = linear_problem(n_cells=100, u0=ScalarField("1", 1), horizon=3.0)
    traj = solve_evolution(spec, record_all=True)
    for a, b in zip(traj.fields, traj.fields[1:]):
        assert np.all(b.values <= a.values + 1e-12)
    assert traj.report.violations == 0


def test_evolution_matches_stationary(canonical, canonical_solution):
    u, _ = canonical_solution
    traj = solve_evolution(canonical, horizon=50.0, init=canonical.grid.constant_field(0.0))
    assert np.max(np.abs(traj.final.values - u.values)) <= 1e-4


def test_evolution_checkpoints_snap():
    spec = linear_problem(n_cells=40, u0=ScalarField("0", 1), horizon=1.0)
    traj = solve_evolution(spec, checkpoints=(0.0, 0.5, 1.0))
    assert len(traj.times) == 3
    assert traj.times[-1] == pytest.approx(1.0)
    assert abs(traj.times[1] - 0.5) <= traj.report.dt / 2


def test_uniqueness_from_two_initializations(canonical):
    grid = canonical.grid
    a, _ = solve_stationary(canonical, init=grid.field_from(lambda p: np.zeros(len(p))))
    b, _ = solve_stationary(canonical, init=grid.field_from(lambda p: np.ones(len(p))))
    assert np.max(np.abs(a.values - b.values)) <= 1e-5


def test_max_iter_carries_best_field(canonical):
    with pytest.raises(MaxIterExceeded) as info:
        solve_stationary(canonical, max_iter=5)
    field, report = info.value.field, info.value.report
    assert not report.converged and report.iterations == 5
    assert field.values.shape == (canonical.grid.size,)


def test_threads_do_not_change_result():
    a = solve_stationary(linear_problem(n_cells=100))[0].values
    spec = linear_problem(n_cells=100)
    spec = ProblemSpec(spec.grid, spec.local, spec.terms, threads=4)
    b = solve_stationary(spec)[0].values
    assert np.array_equal(a, b)


# HJB variant ----------------------------------------------------------------------

def _hjb(terms_axes, n=24):
    g = ScalarField("0", 2)
    grid = Grid(Domain.square(-1.0, 1.0, g, margin=1.0), n)
    m = LevyMeasure.power_law(1.0)
    q = build_quadrature(m, grid.h, 1e4)
    terms = [Term(NonlocalScalarMap.identity(), JumpKernel.axis_kernel(a, 2), m, q) for a in terms_axes]
    f = ScalarField("1 + 0.5*cos(x0)*cos(x1)", 2)
    return ProblemSpec(grid, LocalOperator.linear(1.0, f), terms)


def test_hjb_symmetric_under_swap():
    spec = _hjb([0, 1])
    u, rep = solve_stationary(spec)
    arr = u.values.reshape(spec.grid.shape)
    assert np.max(np.abs(arr - arr.T)) <= 1e-6
    assert rep.residual_sup <= 1e-6


def test_hjb_identical_copies_match_singleton():
    one, r1 = solve_stationary(_hjb([0]))
    three, r3 = solve_stationary(_hjb([0, 0, 0]))
    assert np.array_equal(one.values, three.values)
    assert r1.iterations == r3.iterations


def test_dimension_mismatch_rejected():
    from jumpvisc.errors import DimensionMismatch

    spec = linear_problem(n_cells=20)
    t = spec.terms[0]
    with pytest.raises(DimensionMismatch):
        ProblemSpec(spec.grid, spec.local, [Term(t.G, JumpKernel.identity(2), t.measure, t.quad)])


def test_report_json_has_no_wall_time_by_default(canonical_solution):
    _, rep = canonical_solution
    d = rep.to_dict(include_wall=False)
    assert "wall_ms" not in d
    assert set(d) >= {"residual_sup", "iterations", "dt", "bounds", "violations"}
    assert math.isfinite(rep.wall_ms)
