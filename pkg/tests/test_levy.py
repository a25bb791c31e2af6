import math

import numpy as np
import pytest
from conftest import zoo
from scipy import integrate

from jumpvisc.errors import NonIntegrable, QuadratureMismatch
from jumpvisc.exprlang import ScalarField
from jumpvisc.grid import Domain, Grid, gradient_hessian
from jumpvisc.kernel import JumpKernel
from jumpvisc.levy import (
    TruncationParams,
    assemble,
    epsilon_refinement_study,
    levy_smooth,
    levy_split,
)
from jumpvisc.measure import LevyMeasure, build_quadrature


def _pi_oracle():
    # 2 * int_0^inf (1 - cos s) s^-2 ds, split at 1 and summed over periods
    head, _ = integrate.quad(lambda s: (1 - math.cos(s)) / s ** 2, 0, 1, epsabs=0, epsrel=1e-13)
    tail, _ = integrate.quad(lambda s: 1 / s ** 2, 1, np.inf, epsabs=0, epsrel=1e-13)
    osc, _ = integrate.quad(lambda s: 1 / s ** 2, 1, np.inf, weight="cos", wvar=1.0)
    return 2 * (head + tail - osc)


def _cos_grid(h, g="cos(x0)"):
    dom = Domain(1, (-2.0, 2.0), ("box", -1.0, 1.0), ScalarField(g, 1))
    return Grid(dom, int(round(4 / h)))


def test_pi_oracle():
    assert _pi_oracle() == pytest.approx(math.pi, rel=1e-8)


@pytest.mark.parametrize("x", [0.0, 0.5, 1.0])
def test_cos_eigenfunction_smooth(x):
    m = LevyMeasure.power_law(1.0)
    q = build_quadrature(m, 1e-3, 4000.0, max_shell_width=2.0)
    val = levy_smooth(lambda y: np.cos(y[:, 0]), [x], JumpKernel.identity(1), m, q,
                      grad=lambda y: -np.sin(y), hess=lambda y: -np.cos(y)[None])
    want = -_pi_oracle() * math.cos(x)
    assert val.value == pytest.approx(want, rel=1e-3)
    assert val.value == val.near_field + val.far_field


def test_cos_eigenfunction_grid():
    h = 2.0 ** -10
    grid = _cos_grid(h)
    field = grid.new_field(np.cos(grid.points[:, 0]))
    m = LevyMeasure.power_law(1.0)
    q = build_quadrature(m, h, 4000.0, max_shell_width=2.0)
    k = JumpKernel.identity(1)
    for x in (0.0, 0.5, 1.0):
        i = int(round((x + 2.0) / h))
        val = levy_split(field, i, gradient_hessian(field, i), k, m, q, TruncationParams(h))
        assert val.value == pytest.approx(-math.pi * math.cos(x), rel=1e-3)
        assert val.value == val.near_field + val.far_field
        assert val.tail_remainder_bound == pytest.approx(2 * field.sup_norm() * m.omega / 4000.0)


def test_smooth_examples():
    m = LevyMeasure.power_law(1.0)
    q = build_quadrature(m, 1e-3, 4000.0, max_shell_width=2.0)
    k = JumpKernel.identity(1)
    assert levy_smooth(lambda y: np.zeros(len(y)), [0.2], k, m, q).value == 0.0
    v = levy_smooth(lambda y: np.cos(y[:, 0]), [math.pi / 2], k, m, q,
                    grad=lambda y: -np.sin(y), hess=lambda y: -np.cos(y)[None])
    assert abs(v.value) <= 1e-6
    m2 = LevyMeasure.power_law(1.0, 2)
    q2 = build_quadrature(m2, 1e-2, 100.0)
    gauss = lambda y: np.exp(-np.sum(y * y, axis=1))  # noqa: E731
    assert levy_smooth(gauss, [0.0, 0.0], JumpKernel.radial_scale(2), m2, q2).value == 0.0


def test_non_integrable_growth():
    m = LevyMeasure.power_law(1.0)
    q = build_quadrature(m, 1e-2, 100.0)
    k = JumpKernel.identity(1)
    with pytest.raises(NonIntegrable):
        levy_smooth(lambda y: np.abs(y[:, 0]) ** 1.5, [0.3], k, m, q)
    # growth slower than alpha0 is integrable
    levy_smooth(lambda y: np.abs(y[:, 0]) ** 0.5, [0.3], k, m, q)


def test_quadrature_mismatch():
    grid = _cos_grid(0.05)
    f = grid.new_field(np.cos(grid.points[:, 0]))
    m = LevyMeasure.power_law(1.0)
    q = build_quadrature(m, 0.05, 10.0)
    with pytest.raises(QuadratureMismatch):
        levy_split(f, 40, gradient_hessian(f, 40), JumpKernel.identity(1), m, q, TruncationParams(0.1))
    with pytest.raises(QuadratureMismatch):
        levy_smooth(lambda y: y[:, 0], [0.0], JumpKernel.identity(1), LevyMeasure.power_law(1.0, 2),
                    build_quadrature(LevyMeasure.power_law(1.0, 2), 0.1, 10.0))


def test_delta_slack_sign():
    grid = _cos_grid(0.02)
    f = grid.new_field(np.cos(grid.points[:, 0]))
    m = LevyMeasure.power_law(1.5)
    q = build_quadrature(m, 0.1, 50.0)
    d = gradient_hessian(f, 100)
    k = JumpKernel.identity(1)
    vals = {s: levy_split(f, 100, d, k, m, q, TruncationParams(0.1, 0.3, s)).value
            for s in ("sub", "neutral", "super")}
    gap = 0.3 * q.exact_second_moment_inner
    assert vals["sub"] - vals["neutral"] == pytest.approx(gap, rel=1e-12)
    assert vals["neutral"] - vals["super"] == pytest.approx(gap, rel=1e-12)


def test_affine_compensator_cancels():
    grid = _cos_grid(0.05, g="2 + 3*x0")
    f = grid.new_field(2 + 3 * grid.points[:, 0])
    m = LevyMeasure.power_law(1.2)
    q = build_quadrature(m, 0.05, 1.5)
    for i in (25, 40, 55):
        v = levy_split(f, i, gradient_hessian(f, i), JumpKernel.identity(1), m, q, TruncationParams(0.05))
        assert abs(v.value) <= 1e-12


# kernel x measure zoo ---------------------------------------------------------

ZOO = zoo()


def _zoo_id(case):
    dim, k, m = case
    return f"N{dim}-{k.variant}-{m.label}"


def _setup(dim, kernel, measure, g, n=16):
    dom = Domain(dim, (-1.5, 1.5), ("box", -0.5, 0.5), g)
    grid = Grid(dom, n)
    q = build_quadrature(measure, grid.h, 20.0, nodes_per_shell=4,
                         angles=8 if measure.dim_m == 2 else None)
    return grid, q


@pytest.mark.parametrize("case", ZOO, ids=_zoo_id)
def test_nullity_on_constants(case):
    dim, kernel, measure = case
    c = 1.7
    grid, q = _setup(dim, kernel, measure, lambda pts: np.full(len(pts), c))
    field = grid.constant_field(c)
    rng = np.random.default_rng(0)
    for i in grid.omega_index[::7]:
        d = gradient_hessian(field, i)
        v = levy_split(field, i, d, kernel, measure, q, TruncationParams(q.epsilon))
        assert abs(v.value) <= 1e-12
    ps = rng.normal(size=(len(grid.omega_index), dim))
    st = assemble(grid, kernel, q, grid.omega_index, ps)
    assert np.max(np.abs(st.apply(field.values))) <= 1e-12


@pytest.mark.parametrize("case", ZOO, ids=_zoo_id)
def test_monotone_in_ordered_pairs(case):
    dim, kernel, measure = case
    grid, q = _setup(dim, kernel, measure, lambda pts: np.sin(3 * pts[:, 0]))
    rng = np.random.default_rng(1)
    rows = grid.omega_index
    st = assemble(grid, kernel, q, rows, rng.normal(size=(len(rows), dim)))
    base = grid.field_from(lambda p: np.zeros(len(p))).values
    violations = 0
    for _ in range(100):
        u = base.copy()
        u[rows] = rng.normal(size=len(rows))
        v = u.copy()
        v[rows] += rng.uniform(0, 1, len(rows))
        k = rng.integers(len(rows))
        v[rows[k]] = u[rows[k]]
        diff = st.apply(v)[k] - st.apply(u)[k]
        violations += diff < -1e-12
    assert violations == 0
    # and structurally: off-centre coefficients are nonnegative
    mat = st.matrix.tocoo()
    off = mat.col != rows[mat.row]
    assert np.all(mat.data[off] >= -1e-12 * np.max(np.abs(mat.data)))


@pytest.mark.parametrize("alpha0", [0.5, 1.0, 1.5])
def test_split_monotone_axis_aligned(alpha0):
    # 1-D jet-based split form: X from the three-point difference is ordered at a touching node
    grid = _cos_grid(0.05, g="0")
    m = LevyMeasure.power_law(alpha0)
    q = build_quadrature(m, 0.05, 10.0)
    k = JumpKernel.identity(1)
    rng = np.random.default_rng(2)
    rows = grid.omega_index
    for _ in range(100):
        u = grid.field_from(lambda p: rng.normal(size=len(p)))
        v = u.copy()
        v.values[rows] += rng.uniform(0, 1, len(rows))
        i = int(rng.choice(rows))
        v.values[i] = u.values[i]
        a = levy_split(u, i, gradient_hessian(u, i), k, m, q, TruncationParams(0.05)).value
        b = levy_split(v, i, gradient_hessian(v, i), k, m, q, TruncationParams(0.05)).value
        assert a <= b + 1e-12


def test_assembled_matches_split_for_axis_kernels():
    grid = _cos_grid(0.02)
    field = grid.new_field(np.cos(grid.points[:, 0]))
    m = LevyMeasure.power_law(1.0)
    q = build_quadrature(m, 0.02, 50.0)
    k = JumpKernel.identity(1)
    st = assemble(grid, k, q, grid.omega_index)
    got = st.apply(field.values)
    for j in (0, 30, 70):
        i = grid.omega_index[j]
        ref = levy_split(field, i, gradient_hessian(field, i), k, m, q, TruncationParams(0.02)).value
        assert got[j] == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_assembly_independent_of_threads():
    dom = Domain(2, (-1.5, 1.5), ("box", -0.5, 0.5), lambda p: np.zeros(len(p)))
    grid = Grid(dom, 24)
    q = build_quadrature(LevyMeasure.power_law(1.0), grid.h, 20.0)
    a = assemble(grid, JumpKernel.rotational(), q, grid.omega_index, threads=1, chunk=16)
    b = assemble(grid, JumpKernel.rotational(), q, grid.omega_index, threads=4, chunk=16)
    assert (a.matrix != b.matrix).nnz == 0
    assert np.array_equal(a.offset, b.offset)


# refinement study ----------------------------------------------------------------

def test_refinement_order_smooth():
    m = LevyMeasure.power_law(1.0)
    u = lambda y: np.exp(-y[:, 0] ** 2)  # noqa: E731
    eps = [0.2 / 2 ** k for k in range(6)]
    table = epsilon_refinement_study(u, [0.3], JumpKernel.identity(1), m, eps, delta=0.5,
                                     grad=lambda x: -2 * x * np.exp(-x ** 2),
                                     hess=lambda x: ((4 * x ** 2 - 2) * np.exp(-x ** 2))[None])
    assert table.orders[-1] == pytest.approx(1.0, abs=0.3)
    assert table.to_csv().splitlines()[0] == "epsilon,value,near,far,delta_prev"


def test_refinement_constant_is_zero():
    m = LevyMeasure.power_law(1.0)
    table = epsilon_refinement_study(lambda y: np.full(len(y), 4.0), [0.1], JumpKernel.identity(1),
                                     m, [0.2, 0.1, 0.05])
    assert all(r["value"] == 0.0 for r in table.rows)


def test_refinement_limit_matches_smooth():
    m = LevyMeasure.power_law(0.5)
    k = JumpKernel.identity(1)
    cos = lambda y: np.cos(y[:, 0])  # noqa: E731
    grad = lambda x: -np.sin(x)  # noqa: E731
    hess = lambda x: -np.cos(x)[None]  # noqa: E731
    table = epsilon_refinement_study(cos, [0.3], k, m, [0.1, 0.05, 0.025, 0.0125], z_max=4000.0,
                                     max_shell_width=2.0, grad=grad, hess=hess)
    q = build_quadrature(m, 1e-3, 4000.0, max_shell_width=2.0)
    ref = levy_smooth(cos, [0.3], k, m, q, grad=grad, hess=hess, check_integrable=False)
    assert table.limit == pytest.approx(ref.value, abs=1e-6)
