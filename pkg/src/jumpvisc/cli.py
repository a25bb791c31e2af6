"""Command-line entry point.

    jumpvisc COMMAND --config FILE [--output DIR] [--seed N] [--threads N] [--force]

Exit codes: 0 success, 1 a condition check failed, 2 configuration error,
3 numerical failure, 4 a comparison hypothesis was not met.  Outputs carry
no timestamps or timings (unless ``--timing``) so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, load_config
from .errors import (ConfigError, ExprError, GradientDependentKernel, HypothesisNotMet, JumpviscError,
                     NumericError)
from .grid import GridField, read_field_csv, sample_extended
from .kernel import verify_growth, verify_lipschitz, verify_nondegeneracy
from .levy import levy_smooth
from .local_op import check_ellipticity, check_monotone_map, check_proper, check_structure
from .measure import build_quadrature, check_integrability, tail_moment

COMMANDS = ("check-conditions", "solve-stationary", "solve-evolution", "verify-comparison",
            "study-equivalence", "mc-validate", "operator-table")

EXIT_OK, EXIT_CONDITIONS, EXIT_CONFIG, EXIT_NUMERIC, EXIT_HYPOTHESIS = 0, 1, 2, 3, 4


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, args, cfg: RunConfig):
        self.args = args
        self.cfg = cfg
        self.seed = cfg.seed if args.seed is None else int(args.seed)
        self.out = args.output or cfg.tree["output"]["dir"]
        os.makedirs(self.out, exist_ok=True)
        self.files = {}

    def write(self, name, text):
        path = os.path.join(self.out, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()

    def manifest(self, command, exit_code):
        data = {
            "command": command,
            "exit_code": exit_code,
            "config_sha256": self.cfg.digest(self.seed),
            "effective_config": self.cfg.effective(self.seed),
            "seed": self.seed,
            "versions": {"artifact": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "files": dict(sorted(self.files.items())),
        }
        self.write("manifest.json", _dumps(data))


# condition checks -------------------------------------------------------------------


def conditions_report(cfg: RunConfig, seed):
    """Run every validator; returns (all_required_passed, report dict)."""
    dom = cfg.domain()
    unbounded = not dom.bounded
    items = []

    def add(name, term, rep, required=True):
        d = rep.to_dict() if hasattr(rep, "to_dict") else dict(rep)
        d.update({"condition": name, "term": term, "required": required})
        items.append(d)

    for k in range(len(cfg.term_trees())):
        kern = cfg.kernel(k)
        meas = cfg.measure(k)
        add("beta", k, verify_growth(kern, seed=seed))
        add("betacont", k, verify_lipschitz(kern, seed=seed))
        integ = check_integrability(meas)
        add("integ", k, {"pass": integ.ok, "worst_ratio": integ.inner_second_moment,
                         "witness": {"outer_mass": integ.outer_mass}, "samples": 0,
                         "note": integ.detail})
        mu = meas.mu
        if mu is None and meas.family == "power_law":
            mu = meas.alpha0 / 2.0
        if mu is None:
            add("unbounded", k, {"pass": False, "worst_ratio": None, "witness": {}, "samples": 0,
                                 "note": "no exponent mu configured"}, unbounded)
        else:
            try:
                val = tail_moment(meas, 1.0, mu) if integ.ok else math.inf
                ok = math.isfinite(val)
            except NumericError:
                val, ok = math.inf, False
            add("unbounded", k, {"pass": ok, "worst_ratio": val, "witness": {"mu": mu},
                                 "samples": 0, "note": "tail moment of order mu beyond |z| = 1"},
                unbounded)
        try:
            add("unbounded2", k, verify_nondegeneracy(kern, seed=seed), unbounded)
        except GradientDependentKernel as exc:
            add("unbounded2", k, {"pass": False, "worst_ratio": None, "witness": {}, "samples": 0,
                                  "note": str(exc)}, unbounded)
        add("G", k, check_monotone_map(cfg.G(k), seed=seed))
    local = cfg.local()
    add("F", None, check_ellipticity(local, dim=cfg.dim, seed=seed))
    add("proper", None, check_proper(local, dim=cfg.dim, seed=seed))
    add("structure", None, check_structure(local, dim=cfg.dim, seed=seed))
    ok = all(bool(i["pass"]) for i in items if i["required"])
    return ok, {"all_passed": ok, "conditions": items}


# commands ---------------------------------------------------------------------------------


def cmd_check(run: Run):
    ok, rep = conditions_report(run.cfg, run.seed)
    run.write("conditions.json", _dumps(rep))
    return EXIT_OK if ok else EXIT_CONDITIONS


def _report(rep, timing):
    return _dumps(rep.to_dict(include_wall=timing))


def cmd_solve(run: Run):
    from .solver import solve_stationary

    spec = run.cfg.problem(run.args.threads)
    s = run.cfg.tree["solver"]
    field, rep = solve_stationary(spec, tol=float(s["tol"]), max_iter=int(s["max_iter"]))
    run.write("u.csv", field.to_csv())
    run.write("report.json", _report(rep, run.args.timing))
    return EXIT_OK


def _tag(t):
    return f"{t:.6g}".replace(".", "p").replace("-", "m")


def cmd_evolve(run: Run):
    from .solver import solve_evolution

    spec = run.cfg.problem(run.args.threads)
    ev = run.cfg.tree["evolution"]
    if ev.get("T") is None:
        raise ConfigError("evolution.T is required", key="evolution.T")
    traj = solve_evolution(spec, float(ev["T"]), checkpoints=[float(c) for c in ev["checkpoints"]])
    for t, f in zip(traj.times, traj.fields):
        run.write(f"u_t{_tag(t)}.csv", f.to_csv())
    run.write("u_final.csv", traj.final.to_csv())
    run.write("report.json", _report(traj.report, run.args.timing))
    return EXIT_OK


def _field_arg(spec, path, expr, default):
    grid = spec.grid
    if path:
        with open(path, encoding="utf-8") as fh:
            return read_field_csv(grid, fh.read())
    if expr is None:
        return grid.constant_field(default)
    from .exprlang import ScalarField

    return GridField(grid, ScalarField(str(expr), grid.dim)(grid.points))


def cmd_compare(run: Run):
    from .solver import perron_bounds
    from .verify import comparison_check

    spec = run.cfg.problem(run.args.threads)
    c = run.cfg.tree["comparison"]
    b = perron_bounds(spec)
    u = _field_arg(spec, run.args.u, c.get("u"), b.m)
    v = _field_arg(spec, run.args.v, c.get("v"), b.M)
    try:
        rep = comparison_check(spec, u, v, tol=float(c["tol"]), delta=float(c["delta"]))
    except HypothesisNotMet as exc:
        run.write("comparison.json", _dumps({"pass": None, "hypotheses_failed": exc.failed}))
        raise
    run.write("comparison.json", _dumps(rep.to_dict()))
    return EXIT_OK


def cmd_study(run: Run):
    from .verify import constant_case, definition_equivalence_study, gaussian_case

    cfg = run.cfg
    st = cfg.tree["study"]
    cases = []
    for i, c in enumerate(st["cases"]):
        kind = c.get("kind", "gaussian")
        x = c.get("x", 0.3)
        if kind == "gaussian":
            cases.append(gaussian_case(c.get("center", 0.0), float(c.get("width", 1.0)), x, cfg.dim,
                                       c.get("name")))
        elif kind == "constant":
            cases.append(constant_case(float(c.get("value", 1.0)), x, cfg.dim))
        else:
            raise ConfigError(f"unknown study case kind {kind!r}", key=f"study.cases[{i}]")
    table = definition_equivalence_study(cases, cfg.kernel(0), cfg.measure(0), st["eps"], st["delta"],
                                         cfg.local(), cfg.G(0), z_max=float(st["z_max"]))
    run.write("study.csv", table.to_csv())
    orders = [{"case": k[0], "delta": k[1], "orders": v} for k, v in sorted(table.orders.items())]
    run.write("orders.json", _dumps(orders))
    return EXIT_OK


def cmd_mc(run: Run):
    from .mc import PathConfig, simulate_value
    from .solver import solve_stationary

    spec = run.cfg.problem(run.args.threads)
    m = run.cfg.tree["mc"]
    probes = m.get("probes")
    if probes is None:
        probes = [[0.0] * spec.grid.dim]
    probes = tuple(tuple(float(c) for c in np.atleast_1d(p)) for p in probes)
    pc = PathConfig(float(m["eps_cut"]), float(m["dt_drift"]), int(m["n_paths"]), run.seed,
                    None if m.get("t_max") is None else float(m["t_max"]), probes, run.args.threads)
    ests = simulate_value(spec, pc)
    s = run.cfg.tree["solver"]
    u, _ = solve_stationary(spec, tol=float(s["tol"]), max_iter=int(s["max_iter"]))
    rows = []
    for e in ests:
        d = e.to_dict()
        pde = float(sample_extended(u, np.array(e.x)))
        d["pde"] = pde
        d["agree"] = abs(e.mean - pde) <= 3 * e.std_error + 2 * spec.grid.h
        rows.append(d)
    run.write("mc.json", _dumps(rows))
    return EXIT_OK


def cmd_table(run: Run):
    cfg = run.cfg
    t = cfg.tree["operator_table"]
    kern, meas = cfg.kernel(0), cfg.measure(0)
    quad = build_quadrature(meas, float(t["epsilon"]), float(t["z_max"]), int(t["nodes_per_shell"]),
                            max_shell_width=float(t["max_shell_width"]))
    from .exprlang import ScalarField

    u = ScalarField(str(t["u"]), cfg.dim)
    pts = t.get("points") or [[0.0] * cfg.dim]
    cols = [f"x{d}" for d in range(cfg.dim)]
    lines = [",".join(cols + ["value", "near_field", "far_field", "tail_remainder_bound",
                              "l1_estimate"])]
    for p in pts:
        x = np.atleast_1d(np.asarray(p, float))
        v = levy_smooth(u, x, kern, meas, quad, check_integrable=False)
        vals = list(x) + [v.value, v.near_field, v.far_field, v.tail_remainder_bound, v.l1_estimate]
        lines.append(",".join(f"{c:.17g}" for c in vals))
    run.write("operator_table.csv", "\n".join(lines) + "\n")
    return EXIT_OK


HANDLERS = {"check-conditions": cmd_check, "solve-stationary": cmd_solve,
            "solve-evolution": cmd_evolve, "verify-comparison": cmd_compare,
            "study-equivalence": cmd_study, "mc-validate": cmd_mc, "operator-table": cmd_table}


def build_parser():
    p = argparse.ArgumentParser(prog="jumpvisc", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML or JSON configuration file")
    p.add_argument("--output", help="output directory (default: output.dir from the config)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    p.add_argument("--force", action="store_true", help="run even if condition checks fail")
    p.add_argument("--timing", action="store_true", help="include wall times in reports")
    p.add_argument("--u", help="CSV field for u (verify-comparison)")
    p.add_argument("--v", help="CSV field for v (verify-comparison)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(args, cfg)
    code = EXIT_OK
    try:
        if args.command != "check-conditions" and not args.force:
            ok, rep = conditions_report(cfg, run.seed)
            if not ok:
                run.write("conditions.json", _dumps(rep))
                print("condition checks failed (see conditions.json; --force to override)", file=sys.stderr)
                code = EXIT_CONDITIONS
        if code == EXIT_OK:
            code = HANDLERS[args.command](run)
    except (ConfigError, ExprError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except HypothesisNotMet as exc:
        print(f"hypothesis not met: {exc}", file=sys.stderr)
        code = EXIT_HYPOTHESIS
    except NumericError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    except (JumpviscError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    run.manifest(args.command, code)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
