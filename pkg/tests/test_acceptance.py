"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line (shown in the terminal summary) before
asserting, so a single run reports all criteria.
"""

import json
import math
import os
import sys
import tempfile
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE, zoo
from scipy import integrate

from jumpvisc.cli import main as cli_main
from jumpvisc.config import load_config, parse_config
from jumpvisc.exprlang import ScalarField
from jumpvisc.grid import Domain, Grid, gradient_hessian, sample_extended
from jumpvisc.kernel import (
    JumpKernel,
    orthogonality_residual,
    verify_growth,
    verify_lipschitz,
    verify_nondegeneracy,
)
from jumpvisc.levy import TruncationParams, assemble, levy_smooth, levy_split
from jumpvisc.mc import PathConfig, simulate_value
from jumpvisc.measure import LevyMeasure, build_quadrature, tail_moment
from jumpvisc.solver import (
    cfl_bound,
    perron_bounds,
    residual,
    solve_evolution,
    solve_stationary,
    step_explicit,
)
from jumpvisc.verify import (
    build_weight,
    classify,
    comparison_check,
    definition_equivalence_study,
    gaussian_case,
)

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def cfg_path(name):
    return os.path.join(ROOT, "configs", name)


def config(name, **over):
    """Config from configs/, with top-level sections patched by ``over``."""
    tree = load_config(cfg_path(name)).effective()
    for key, val in over.items():
        if isinstance(val, dict):
            tree[key] = {**tree.get(key, {}), **val}
        else:
            tree[key] = val
    return parse_config(json.dumps(tree))


def verdict(n, title, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def pi_oracle():
    # 2 * int_0^inf (1 - cos s) s^-2 ds, split at 1 and summed over periods
    head, _ = integrate.quad(lambda s: (1 - math.cos(s)) / s ** 2, 0, 1, epsabs=0, epsrel=1e-13)
    tail, _ = integrate.quad(lambda s: 1 / s ** 2, 1, np.inf, epsabs=0, epsrel=1e-13)
    osc, _ = integrate.quad(lambda s: 1 / s ** 2, 1, np.inf, weight="cos", wvar=1.0)
    return 2 * (head + tail - osc)


# 1 ------------------------------------------------------------------------------------

def test_criterion_1_operator_oracle():
    t0 = time.perf_counter()
    pi = pi_oracle()
    pi_err = abs(pi - math.pi) / math.pi
    h = 2.0 ** -10
    m = LevyMeasure.power_law(1.0)
    k = JumpKernel.identity(1)
    q = build_quadrature(m, h, 4000.0, max_shell_width=2.0)
    grid = Grid(Domain(1, (-2.0, 2.0), ("box", -1.0, 1.0), ScalarField("cos(x0)", 1)), int(4 / h))
    field = grid.new_field(np.cos(grid.points[:, 0]))
    worst = 0.0
    for x in (0.0, 0.5, 1.0):
        want = -pi * math.cos(x)
        s = levy_smooth(lambda y: np.cos(y[:, 0]), [x], k, m, q,
                        grad=lambda y: -np.sin(y), hess=lambda y: -np.cos(y)[None]).value
        i = int(round((x + 2.0) / h))
        g = levy_split(field, i, gradient_hessian(field, i), k, m, q, TruncationParams(h)).value
        worst = max(worst, abs(s - want) / abs(want), abs(g - want) / abs(want))
    secs = time.perf_counter() - t0
    ok = pi_err <= 1e-8 and worst <= 1e-3 and secs < 10
    verdict(1, "operator oracle -pi cos(x)", ok,
            f"pi rel err {pi_err:.1e} <= 1e-8, operator rel err {worst:.1e} <= 1e-3, {secs:.1f}s < 10s")


# 2 ------------------------------------------------------------------------------------

def test_criterion_2_nullity_and_monotonicity():
    t0 = time.perf_counter()
    worst_null = 0.0
    violations = 0
    pairs = 0
    for dim, kernel, measure in zoo():
        dom = Domain(dim, (-1.5, 1.5), ("box", -0.5, 0.5), lambda p: np.full(len(p), 1.7))
        grid = Grid(dom, 16)
        q = build_quadrature(measure, grid.h, 20.0, nodes_per_shell=4,
                             angles=8 if measure.dim_m == 2 else None)
        rows = grid.omega_index
        rng = np.random.default_rng(7)
        const = grid.constant_field(1.7)
        for i in rows[::5]:
            v = levy_split(const, i, gradient_hessian(const, i), kernel, measure, q, TruncationParams(q.epsilon))
            worst_null = max(worst_null, abs(v.value))
        st = assemble(grid, kernel, q, rows, rng.normal(size=(len(rows), dim)))
        worst_null = max(worst_null, float(np.max(np.abs(st.apply(const.values)))))
        for _ in range(100):
            u = const.values.copy()
            u[rows] = rng.normal(size=len(rows))
            w = u.copy()
            w[rows] += rng.uniform(0, 1, len(rows))
            j = rng.integers(len(rows))
            w[rows[j]] = u[rows[j]]
            violations += int(st.apply(w)[j] - st.apply(u)[j] < -1e-12)
            pairs += 1
    secs = time.perf_counter() - t0
    ok = worst_null <= 1e-12 and violations == 0 and secs < 60
    verdict(2, "nullity and monotonicity over the kernel x measure zoo", ok,
            f"{len(zoo())} instances, max |I[const]| {worst_null:.1e} <= 1e-12, "
            f"{violations}/{pairs} violations, {secs:.1f}s < 60s")


# 3 ------------------------------------------------------------------------------------

def test_criterion_3_epsilon_refinement_order():
    found = []
    ok = True
    for alpha0 in (0.5, 1.0, 1.5):
        table = definition_equivalence_study([gaussian_case(width=1.0, x=0.3)], JumpKernel.identity(1),
                                             LevyMeasure.power_law(alpha0))
        for (_, delta), orders in sorted(table.orders.items()):
            found.append(f"a0={alpha0} d={delta}: {orders[-1]:.3f}")
            ok &= abs(orders[-1] - (2 - alpha0)) <= 0.3
    verdict(3, "truncated residual order 2 - alpha0 +- 0.3", ok, "; ".join(found))


# 4 ------------------------------------------------------------------------------------

def test_criterion_4_perron_sandwich():
    spec = config("canonical.yaml", grid={"n_cells": 800}).problem()
    t0 = time.perf_counter()
    u, rep = solve_stationary(spec, tol=1e-6)
    secs = time.perf_counter() - t0
    grid = spec.grid
    vals = u.values[grid.omega_index]
    res = float(np.max(np.abs(residual(spec, u))))
    sym = float(np.max(np.abs(u.values - u.values[::-1])))
    ok = (grid.h == 1 / 200 and vals.min() >= 0 and vals.max() <= 1 and res <= 1e-6 and sym <= 1e-6
          and secs < 120)
    verdict(4, "Perron sandwich on the canonical instance", ok,
            f"h={grid.h}, u in [{vals.min():.3g}, {vals.max():.6f}], residual {res:.1e} <= 1e-6, "
            f"asymmetry {sym:.1e} <= 1e-6, u(0)={u.values[len(u.values) // 2]:.6f}, {secs:.1f}s < 120s")


# 5 ------------------------------------------------------------------------------------

def test_criterion_5_discrete_comparison():
    spec = config("canonical.yaml").problem()
    grid = spec.grid
    rows = grid.omega_index
    ext = np.setdiff1d(np.arange(grid.size), rows)
    b = perron_bounds(spec)
    u, _ = solve_stationary(spec)
    cands = [grid.constant_field(c) for c in (b.m, 0.25, 0.5, b.M)] + [u]
    cls = [classify(spec, f) for f in cands]
    subs = [f for f, c in zip(cands, cls) if c.is_sub]
    sups = [f for f, c in zip(cands, cls) if c.is_super]
    checked, worst = 0, 0.0
    for a in subs:
        for v in sups:
            if np.all(a.values[ext] <= v.values[ext]):
                rep = comparison_check(spec, a, v)
                worst = max(worst, rep.max_violation)
                checked += 1 if rep.passed else 0
    # order preservation of one explicit step
    dt = cfl_bound(spec, (-3.0, 3.0))
    rng = np.random.default_rng(11)
    step_viol = 0
    for _ in range(100):
        x = grid.field_from(lambda p: rng.uniform(-1, 1, len(p)))
        y = x.copy()
        y.values[rows] += rng.uniform(0, 1, len(rows))
        step_viol += int(np.max(step_explicit(spec, x, dt).values - step_explicit(spec, y, dt).values) > 1e-12)
    # evolution from the supersolution M
    traj = solve_evolution(spec, horizon=2.0, init=grid.constant_field(b.M), record_all=True)
    rises = max(float(np.max(q.values - p.values)) for p, q in zip(traj.fields, traj.fields[1:]))
    ok = checked >= 5 and worst == 0.0 and step_viol == 0 and rises <= 0.0
    verdict(5, "discrete comparison, order-preserving step, monotone evolution", ok,
            f"{checked} classified pairs, max violation {worst}, {step_viol}/100 step violations, "
            f"max rise {rises:.1e}")


# 6 ------------------------------------------------------------------------------------

def test_criterion_6_stationary_evolution_consistency():
    cfg = config("canonical.yaml")
    spec = cfg.problem()
    gamma = spec.local.gamma
    u, _ = solve_stationary(spec)
    traj = solve_evolution(spec, horizon=50.0 / gamma, init=spec.grid.constant_field(0.0))
    gap = float(np.max(np.abs(traj.final.values - u.values)))
    verdict(6, "evolution at T = 50/gamma matches the stationary solve", gap <= 1e-4,
            f"sup gap {gap:.1e} <= 1e-4")


# 7 ------------------------------------------------------------------------------------

def test_criterion_7_monte_carlo():
    cfg = config("canonical.yaml")
    spec = cfg.problem()
    u, _ = solve_stationary(spec)
    mc = cfg.tree["mc"]
    t0 = time.perf_counter()
    ests = simulate_value(spec, PathConfig(eps_cut=float(mc["eps_cut"]), n_paths=100_000, seed=cfg.seed,
                                           probes=((-0.5,), (0.0,), (0.5,))))
    secs = time.perf_counter() - t0
    ok = secs < 300
    parts = []
    for e in ests:
        pde = float(sample_extended(u, np.array(e.x)))
        tol = 3 * e.std_error + 2 * spec.grid.h
        ok &= abs(e.mean - pde) <= tol
        parts.append(f"x={e.x[0]}: |{e.mean:.4f}-{pde:.4f}|={abs(e.mean - pde):.4f} <= {tol:.4f}")
    verdict(7, "Monte Carlo agrees with the PDE solution", ok, "; ".join(parts) + f", {secs:.0f}s < 300s")


# 8 ------------------------------------------------------------------------------------

def test_criterion_8_condition_validators():
    parts = []
    half = dict(B0=0.5, B1=0.5, B2=0.5, B3=0.5, R=1.0)
    ex11 = JumpKernel.radial_scale(2, **half)
    ok11 = all(f(ex11).passed for f in (verify_growth, verify_lipschitz, verify_nondegeneracy))
    parts.append(f"radial-scale kernel {'ok' if ok11 else 'fails'}")
    ex12 = JumpKernel.rotational()
    orth = orthogonality_residual(ex12)
    ok12 = all(f(ex12).passed for f in (verify_growth, verify_lipschitz, verify_nondegeneracy)) and orth <= 1e-14
    parts.append(f"rotational kernel {'ok' if ok12 else 'fails'}, orthogonality {orth:.1e} <= 1e-14")
    # finite tail moment of order alpha0/2 beyond |z| = 1
    ok_mu = all(math.isfinite(tail_moment(LevyMeasure.power_law(a, d), 1.0, a / 2))
                for a in (0.25, 0.5, 1.0, 1.5, 1.9) for d in (1, 2))
    parts.append(f"mu = alpha0/2 {'ok' if ok_mu else 'fails'}")
    # Identity kernel with |beta| <= B1 |x| for |x| >= R = 1/B1 gives B3 = 1 - B1
    ok_b3 = all(verify_nondegeneracy(JumpKernel.identity(2, B1=b1, B3=1 - b1, R=1 / b1)).passed
                for b1 in (0.25, 0.5, 0.75))
    parts.append(f"B3 = 1 - B1 {'ok' if ok_b3 else 'fails'}")
    ok_cli = True
    with tempfile.TemporaryDirectory() as tmp:
        for name in ("radial_scale.yaml", "rotational.yaml"):
            ok_cli &= cli_main(["check-conditions", "--config", cfg_path(name), "--output",
                                os.path.join(tmp, name)]) == 0
    parts.append(f"check-conditions {'exit 0' if ok_cli else 'fails'}")
    verdict(8, "condition validators reproduce the stated examples", ok11 and ok12 and ok_mu and ok_b3 and ok_cli,
            ", ".join(parts))


# 9 ------------------------------------------------------------------------------------

def test_criterion_9_hjb_variant():
    cfg = config("hjb_axis.yaml")
    spec = cfg.problem()
    u, rep = solve_stationary(spec)
    arr = u.values.reshape(spec.grid.shape)
    sym = float(np.max(np.abs(arr - arr.T)))
    one = solve_stationary(config("hjb_axis.yaml", terms=[{"kernel": {"variant": "axis", "axis": 0}}]).problem())[0]
    three = solve_stationary(config("hjb_axis.yaml",
                                    terms=[{"kernel": {"variant": "axis", "axis": 0}}] * 3).problem())[0]
    copies = float(np.max(np.abs(one.values - three.values)))
    ok = sym <= 1e-6 and rep.residual_sup <= 1e-6 and copies <= 1e-12
    verdict(9, "HJB axis kernels: swap symmetry and identical copies", ok,
            f"asymmetry {sym:.1e} <= 1e-6, copies vs singleton {copies:.1e}")


# 10 -----------------------------------------------------------------------------------

def test_criterion_10_weight_function():
    worst_c2, power_ok, sign_ok = 0.0, True, True
    for mu in (0.1, 0.5, 1.0, 1.5, 1.9):
        for r in (0.5, 1.0, 3.0):
            w = build_weight(r, mu)
            for order in range(3):
                outer = w.derivative(r, order)
                worst_c2 = max(worst_c2, abs(w.inner_derivative(r, order) - outer) / max(1.0, abs(outer)))
            s = np.linspace(r, 10 * r, 1001)
            power_ok &= bool(np.array_equal(w(s), s ** mu))
            dense = np.linspace(0, 10 * r, 100_001)
            sign_ok &= bool(np.all(w(dense) >= 0) and np.all(w.derivative(dense, 1) >= 0))
    ok = worst_c2 <= 1e-12 and power_ok and sign_ok
    verdict(10, "weight function C2 matching, power law, sign", ok,
            f"C2 mismatch {worst_c2:.1e} <= 1e-12, exact power law {power_ok}, nonnegative {sign_ok}")


# 11 -----------------------------------------------------------------------------------

COMMANDS = [("check-conditions", "canonical.yaml"), ("solve-stationary", "canonical.yaml"),
            ("solve-evolution", "canonical.yaml"), ("verify-comparison", "canonical.yaml"),
            ("study-equivalence", "study.yaml"), ("mc-validate", "canonical.yaml"),
            ("operator-table", "canonical.yaml")]


def _files(d):
    return {p: open(os.path.join(d, p), "rb").read() for p in sorted(os.listdir(d))}


def test_criterion_11_reproducibility():
    bad = []
    with tempfile.TemporaryDirectory() as tmp:
        for cmd, name in COMMANDS:
            outs = []
            for tag, threads in (("a", 1), ("b", 1), ("c", 4)):
                out = os.path.join(tmp, f"{cmd}-{tag}")
                code = cli_main([cmd, "--config", cfg_path(name), "--output", out, "--threads", str(threads)])
                outs.append((code, _files(out)))
            if not (outs[0][0] == 0 and outs[0] == outs[1] == outs[2]):
                bad.append(cmd)
    verdict(11, "CLI outputs byte-identical across reruns and thread counts", not bad,
            f"{len(COMMANDS)} commands x 3 runs, mismatches: {bad or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
