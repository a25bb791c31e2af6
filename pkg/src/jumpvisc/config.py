"""Run configuration: a YAML (or JSON) key tree turned into library objects.

Every problem found while reading the tree is collected first, then raised
together as one :class:`ConfigError`, so nothing is computed from a
half-valid file.  :func:`effective` returns the fully defaulted tree in
canonical form; it re-parses to an equivalent configuration.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re

import numpy as np
import yaml

from ._sampling import DEFAULT_SEED
from .errors import ConfigError, ExprError
from .exprlang import ScalarField
from .grid import Domain, Grid
from .kernel import JumpKernel, KernelConstants
from .local_op import LocalOperator, NonlocalScalarMap
from .measure import LevyMeasure, build_quadrature

TOP_KEYS = {"seed", "domain", "grid", "measure", "kernel", "terms", "F", "G", "solver",
            "evolution", "mc", "comparison", "study", "operator_table", "output"}

DEFAULTS = {
    "seed": DEFAULT_SEED,
    "grid": {"n_cells": 400},
    "F": {"form": "linear", "gamma": 1.0, "f": "0", "c": 0.0},
    "G": {"form": "identity"},
    "solver": {"tol": 1e-6, "max_iter": 200_000, "epsilon": None, "z_max": 1.0e4,
               "nodes_per_shell": 8, "growth_ratio": 2.0, "angles": None},
    "evolution": {"T": None, "checkpoints": [], "u0": None},
    "mc": {"eps_cut": 0.01, "dt_drift": 0.01, "n_paths": 100_000, "t_max": None, "probes": None},
    "comparison": {"u": None, "v": None, "tol": 1e-6, "delta": 0.0},
    "study": {"cases": [{"kind": "gaussian", "width": 1.0, "x": 0.3}],
              "eps": [0.2, 0.1, 0.05, 0.025, 0.0125], "delta": [0.0, 0.25, 0.5], "z_max": 200.0},
    "operator_table": {"u": "cos(x0)", "points": None, "epsilon": 1e-3, "z_max": 4000.0,
                       "max_shell_width": 2.0, "nodes_per_shell": 8},
    "output": {"dir": "out"},
}


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads YAML 1.2 floats such as 1e-6 and 1.0e4."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?(?:[eE][-+]?[0-9]+)?
    |[-+]?\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def load_config(path) -> "RunConfig":
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text)


def parse_config(text: str) -> "RunConfig":
    try:
        tree = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"malformed config: {getattr(exc, 'problem', exc)}", line=line) from exc
    if not isinstance(tree, dict):
        raise ConfigError("config must be a mapping at the top level")
    return RunConfig(tree)


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class RunConfig:
    """Validated, defaulted configuration tree plus object builders."""

    def __init__(self, tree: dict):
        self.errors = []
        unknown = sorted(set(tree) - TOP_KEYS)
        for k in unknown:
            self.errors.append(("unknown key", k))
        self.tree = _merge(DEFAULTS, tree)
        if "domain" not in tree:
            self.errors.append(("missing section", "domain"))
        if "measure" not in tree and "terms" not in tree:
            self.errors.append(("missing section", "measure"))
        if "kernel" not in tree and "terms" not in tree:
            self.errors.append(("missing section", "kernel"))
        if not self.errors:
            self._check()
        if self.errors:
            msg = "; ".join(f"{what} at {key}" for what, key in self.errors)
            raise ConfigError(f"{len(self.errors)} problem(s): {msg}", key=self.errors[0][1])

    # validation ----------------------------------------------------------------

    def _try(self, key, fn):
        try:
            return fn()
        except (ValueError, TypeError, KeyError, ExprError) as exc:
            self.errors.append((str(exc).replace(";", ","), key))
            return None

    def _check(self):
        dom = self._try("domain", self.domain)
        if dom is not None:
            self._try("grid.n_cells", self.grid)
        for k, _ in enumerate(self.term_trees()):
            self._try(f"terms[{k}].measure", lambda k=k: self.measure(k))
            self._try(f"terms[{k}].kernel", lambda k=k: self.kernel(k))
            self._try(f"terms[{k}].G", lambda k=k: self.G(k))
        self._try("F", self.local)
        ev = self.tree["evolution"]
        if ev.get("u0") is not None:
            self._try("evolution.u0", lambda: ScalarField(str(ev["u0"]), self.dim))
        s = self.tree["solver"]
        for key in ("tol", "max_iter", "z_max"):
            v = s.get(key)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
                self.errors.append(("must be a positive number", f"solver.{key}"))
        seed = self.tree["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            self.errors.append(("must be a nonnegative integer", "seed"))

    # builders --------------------------------------------------------------------

    @property
    def dim(self) -> int:
        return int(self.tree["domain"].get("dim", 1))

    @property
    def seed(self) -> int:
        return int(self.tree["seed"])

    def field(self, text) -> ScalarField:
        return ScalarField(str(text), self.dim)

    def domain(self) -> Domain:
        d = self.tree["domain"]
        dim = self.dim
        om = d.get("omega", {"kind": "box", "lo": -1.0, "hi": 1.0})
        kind = om.get("kind", "box")
        margin = float(d.get("margin", 1.0))
        if kind == "box":
            lo, hi = float(om["lo"]), float(om["hi"])
            omega = ("box", lo, hi)
            ext = (lo, hi)
        elif kind == "ball":
            c = np.atleast_1d(np.asarray(om["center"], float))
            r = float(om["radius"])
            omega = ("ball", tuple(c.tolist()), r)
            ext = (float(np.min(c)) - r, float(np.max(c)) + r)
        else:
            raise ValueError(f"unknown omega kind {kind!r}")
        box = d.get("box")
        box = (ext[0] - margin, ext[1] + margin) if box is None else (float(box[0]), float(box[1]))
        g = self.field(d.get("g", "0"))
        return Domain(dim, box, omega, g, bool(d.get("bounded", True)))

    def grid(self) -> Grid:
        return Grid(self.domain(), int(self.tree["grid"]["n_cells"]))

    def term_trees(self):
        top = {k: self.tree[k] for k in ("measure", "kernel", "G") if k in self.tree}
        terms = self.tree.get("terms")
        if not terms:
            return [top]
        if not isinstance(terms, list):
            raise ValueError("terms must be a list")
        return [_merge(top, t) for t in terms]

    def measure(self, k=0, validate=False) -> LevyMeasure:
        m = self.term_trees()[k]["measure"]
        fam = m.get("family", "power_law")
        dim_m = int(m.get("dim_m", 1))
        mu = m.get("mu")
        mu = None if mu is None else float(mu)
        if fam == "power_law":
            return LevyMeasure.power_law(float(m["alpha0"]), dim_m, mu)
        if fam == "custom":
            dens = _radial(m["density"])
            return LevyMeasure.radial_density(dens,
                                              dim_m, mu, validate=validate,
                                              label=f"Custom({m['density']})")
        if fam == "tabulated":
            return LevyMeasure.tabulated(m["radii"], m["values"], float(m["tail_exponent"]),
                                         dim_m, mu, validate=validate)
        if fam == "compact":
            dens = _radial(m["density"])
            return LevyMeasure.compact(dens,
                                       float(m["support_radius"]), dim_m, mu, validate=validate)
        raise ValueError(f"unknown measure family {fam!r}")

    def kernel(self, k=0) -> JumpKernel:
        kt = dict(self.term_trees()[k]["kernel"])
        variant = kt.pop("variant", "identity")
        consts = KernelConstants(**{c: float(kt.pop(c)) for c in ("B0", "B1", "B2", "B3", "R") if c in kt})
        dim = self.dim
        if variant == "identity":
            return JumpKernel("identity", dim, dim, consts)
        if variant == "radial_scale":
            return JumpKernel("radial_scale", dim, dim, consts)
        if variant == "rotational":
            return JumpKernel("rotational", dim, 1, consts)
        if variant == "gradient_direction":
            return JumpKernel("gradient_direction", dim, 1, consts, eps0=float(kt.get("eps0", 0.1)))
        if variant == "axis":
            return JumpKernel("axis", dim, 1, consts, axis=int(kt.get("axis", 0)))
        raise ValueError(f"unknown or unsupported kernel variant {variant!r}")

    def G(self, k=0) -> NonlocalScalarMap:
        g = self.term_trees()[k].get("G", {"form": "identity"})
        form = g.get("form", "identity")
        if form == "identity":
            return NonlocalScalarMap.identity()
        if form == "cubic":
            return NonlocalScalarMap.cubic(float(g.get("kappa", 0.0)))
        raise ValueError(f"unknown G form {form!r}")

    def local(self) -> LocalOperator:
        F = self.tree["F"]
        if F.get("form", "linear") != "linear":
            raise ValueError("only the linear form gamma*r - f(x) - c*trace(X) is configurable")
        return LocalOperator.linear(float(F["gamma"]), self.field(F.get("f", "0")), float(F.get("c", 0.0)))

    def quadrature(self, k, grid):
        s = self.tree["solver"]
        eps = s.get("epsilon")
        eps = grid.h if eps is None else float(eps)
        return build_quadrature(self.measure(k), eps, float(s["z_max"]), int(s["nodes_per_shell"]),
                                float(s["growth_ratio"]), s.get("angles"))

    def problem(self, threads=1, validate=True):
        from .solver import ProblemSpec, Term

        grid = self.grid()
        terms = [Term(self.G(k), self.kernel(k), self.measure(k), self.quadrature(k, grid))
                 for k in range(len(self.term_trees()))]
        ev = self.tree["evolution"]
        u0 = self.field(ev["u0"]) if ev.get("u0") is not None else None
        T = ev.get("T")
        return ProblemSpec(grid, self.local(), terms, u0=u0, horizon=None if T is None else float(T),
                           validate=validate, threads=threads)

    # canonical echo --------------------------------------------------------------

    def effective(self, seed=None) -> dict:
        tree = copy.deepcopy(self.tree)
        if seed is not None:
            tree["seed"] = int(seed)
        return _jsonable(tree)

    def canonical_json(self, seed=None) -> str:
        return json.dumps(self.effective(seed), sort_keys=True, separators=(",", ":"))

    def digest(self, seed=None) -> str:
        return hashlib.sha256(self.canonical_json(seed).encode()).hexdigest()


def _radial(text):
    """Radial density from an expression in x0 (the radius)."""
    field = ScalarField(str(text), 1)

    def dens(r):
        r = np.asarray(r, float)
        return field(r.reshape(-1, 1)).reshape(r.shape)
    return dens


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj
