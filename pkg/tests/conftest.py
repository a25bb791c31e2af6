import numpy as np
import pytest

from jumpvisc.grid import Domain, Grid
from jumpvisc.kernel import JumpKernel
from jumpvisc.local_op import LocalOperator, NonlocalScalarMap
from jumpvisc.measure import LevyMeasure, build_quadrature
from jumpvisc.solver import ProblemSpec, Term


def zero_g(pts):
    return np.zeros(len(pts))


def linear_problem(n_cells=200, gamma=1.0, f=1.0, g=zero_g, alpha0=1.0, kernel=None,
                   G=None, z_max=1e4, u0=None, horizon=None, lo=-1.0, hi=1.0):
    """1D problem on (lo, hi); defaults give the canonical instance."""
    grid = Grid(Domain.interval(lo, hi, g), n_cells)
    m = LevyMeasure.power_law(alpha0)
    q = build_quadrature(m, grid.h, z_max)
    term = Term(G or NonlocalScalarMap.identity(), kernel or JumpKernel.identity(1), m, q)
    return ProblemSpec(grid, LocalOperator.linear(gamma, f), [term], u0=u0, horizon=horizon)


def zoo():
    """(N, kernel, measure) triples covering every built-in kernel and measure family."""
    tab_r = np.geomspace(0.01, 10, 20)
    m1 = [LevyMeasure.power_law(a, 1) for a in (0.5, 1.0, 1.5)]
    m1 += [LevyMeasure.tabulated(tab_r, tab_r ** -2.3, 1.3, 1),
           LevyMeasure.compact(lambda r: np.ones_like(r), 1.5, 1)]
    m2 = [LevyMeasure.power_law(a, 2) for a in (0.5, 1.5)]
    k11 = [JumpKernel.identity(1), JumpKernel.radial_scale(1)]
    k21 = [JumpKernel.rotational(), JumpKernel.gradient_direction(2, eps0=0.1),
           JumpKernel.axis_kernel(0, 2), JumpKernel.axis_kernel(1, 2)]
    k22 = [JumpKernel.identity(2), JumpKernel.radial_scale(2)]
    out = [(1, k, m) for k in k11 for m in m1]
    out += [(2, k, m) for k in k21 for m in m1[:3]]
    out += [(2, k, m) for k in k22 for m in m2]
    return out


@pytest.fixture(scope="session")
def canonical():
    return linear_problem()


@pytest.fixture(scope="session")
def canonical_solution(canonical):
    from jumpvisc.solver import solve_stationary

    return solve_stationary(canonical)


# acceptance lines, printed once at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
