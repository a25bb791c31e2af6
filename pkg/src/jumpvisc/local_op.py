"""Local operators F(x, r, p, X), monotone scalar maps G(s), and sampled
checks of properness, degenerate ellipticity, the structure condition and
monotonicity of G."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._sampling import DEFAULT_SEED, sobol
from .errors import AsymmetricHessian
from .kernel import ConditionReport

TOL = 1e-12


def _as_field(f):
    """Accept a ScalarField / vectorized callable / constant."""
    if callable(f):
        return f
    value = float(f)
    return lambda pts: np.full(np.asarray(pts).reshape(len(pts), -1).shape[0], value)


@dataclass(frozen=True, eq=False)
class LocalOperator:
    """``F(x, r, p, X)``.

    ``form='linear'`` is gamma*r - f(x) - c*trace(X) with ``f`` a vectorized
    field on (n, N) arrays.  ``form='custom'`` wraps ``handle(x, r, p, X)``
    for single points; ``lip_r`` and ``lip_x`` bound its Lipschitz constants
    in r and in X (trace norm) for the explicit time step.
    """

    form: str
    gamma: float
    f: Callable | None = None
    c: float = 0.0
    handle: Callable | None = None
    modulus: Callable | None = None
    lip_r: float | None = None
    lip_x: float = 0.0

    def __post_init__(self):
        if self.form not in ("linear", "custom"):
            raise ValueError(f"unknown local operator form {self.form!r}")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.form == "linear" and self.c < 0:
            raise ValueError("diffusion c must be nonnegative (use a custom operator to test c < 0)")
        if self.form == "custom" and self.handle is None:
            raise ValueError("custom operator needs a handle")

    @classmethod
    def linear(cls, gamma, f=0.0, c=0.0):
        return cls("linear", float(gamma), _as_field(f), float(c))

    @classmethod
    def custom(cls, handle, gamma, modulus=None, lip_r=None, lip_x=0.0):
        return cls("custom", float(gamma), handle=handle, modulus=modulus,
                   lip_r=lip_r, lip_x=float(lip_x))

    @property
    def is_linear(self):
        return self.form == "linear"

    @property
    def r_lipschitz(self):
        if self.is_linear:
            return self.gamma
        return self.lip_r if self.lip_r is not None else self.gamma

    @property
    def x_lipschitz(self):
        return self.c if self.is_linear else self.lip_x

    def source(self, xs):
        return np.asarray(self.f(np.asarray(xs, float).reshape(len(xs), -1)), float)

    def __call__(self, x, r, p, X):
        return eval_local(self, x, r, p, X)


def eval_local(op: LocalOperator, x, r, p, X) -> float:
    """F at one point; X must be symmetric."""
    X = np.atleast_2d(np.asarray(X, float))
    if X.shape[0] != X.shape[1] or not np.allclose(X, X.T, rtol=0.0, atol=1e-12):
        raise AsymmetricHessian("Hessian argument is not symmetric")
    x = np.atleast_1d(np.asarray(x, float))
    if op.is_linear:
        return op.gamma * float(r) - float(op.source(x[None])[0]) - op.c * float(np.trace(X))
    return float(op.handle(x, float(r), np.atleast_1d(np.asarray(p, float)), X))


def eval_local_many(op: LocalOperator, xs, r, ps, Xs) -> np.ndarray:
    """Vectorized F over rows; Xs has shape (n, N, N)."""
    xs = np.asarray(xs, float)
    r = np.asarray(r, float)
    if op.is_linear:
        tr = np.trace(np.asarray(Xs, float), axis1=1, axis2=2)
        return op.gamma * r - op.source(xs) - op.c * tr
    return np.array([float(op.handle(x, float(ri), p, X)) for x, ri, p, X in zip(xs, r, ps, Xs)])


# scalar maps -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NonlocalScalarMap:
    """``G(s)``: ``identity``, ``cubic`` (s + kappa s^3) or ``custom``."""

    form: str = "identity"
    kappa: float = 0.0
    handle: Callable | None = None

    def __post_init__(self):
        if self.form not in ("identity", "cubic", "custom"):
            raise ValueError(f"unknown scalar map form {self.form!r}")
        if self.form == "cubic" and self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.form == "custom" and self.handle is None:
            raise ValueError("custom map needs a handle")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def cubic(cls, kappa):
        return cls("cubic", float(kappa))

    @classmethod
    def custom(cls, handle):
        return cls("custom", handle=handle)

    def __call__(self, s):
        s = np.asarray(s, float)
        if self.form == "identity":
            return s
        if self.form == "cubic":
            return s + self.kappa * s ** 3
        return np.asarray(self.handle(s), float)

    def lipschitz(self, interval):
        """sup |G'| on the interval: exact for built-ins, estimated otherwise."""
        a, b = interval
        if self.form == "identity":
            return 1.0
        if self.form == "cubic":
            s = max(abs(a), abs(b))
            return 1.0 + 3.0 * self.kappa * s * s
        return lipschitz_estimate(self, interval)


def lipschitz_estimate(G, interval, n=4001, safety=1.1) -> float:
    """Divided-difference estimate of sup |G'| on [a, b], times ``safety``."""
    a, b = float(interval[0]), float(interval[1])
    if b < a:
        a, b = b, a
    if b == a:
        warnings.warn("degenerate interval: Lipschitz estimate is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    s = np.linspace(a, b, n)
    g = np.asarray(G(s), float)
    return safety * float(np.max(np.abs(np.diff(g) / np.diff(s))))


# validators ------------------------------------------------------------------


def _sample_points(n, dim, seed, extent=2.0):
    u = sobol(n, 2 * dim + 4, seed)
    xs = extent * (2.0 * u[:, :dim] - 1.0)
    ps = 10.0 * (2.0 * u[:, dim:2 * dim] - 1.0)
    return u, xs, ps


def _random_symmetric(rng, n, dim, scale=10.0):
    a = rng.normal(size=(n, dim, dim)) * scale
    return 0.5 * (a + np.transpose(a, (0, 2, 1)))


def _random_psd(rng, n, dim):
    b = rng.normal(size=(n, dim, dim))
    return np.einsum("nij,nkj->nik", b, b)


def check_proper(op: LocalOperator, sample_budget=1000, dim=1, declared_gamma=None,
                 seed=DEFAULT_SEED, extent=2.0) -> ConditionReport:
    """gamma (r - s) <= F(x,r,p,X) - F(x,s,p,X) for r >= s, sampled.

    ``worst_ratio`` is the minimum slack  (F(r)-F(s))/(r-s) - gamma.
    """
    gamma = op.gamma if declared_gamma is None else float(declared_gamma)
    u, xs, ps = _sample_points(sample_budget, dim, seed, extent)
    rng = np.random.default_rng(seed)
    Xs = _random_symmetric(rng, len(xs), dim)
    r = 20.0 * u[:, 2 * dim] - 10.0
    s = r - 10.0 * u[:, 2 * dim + 1] - 1e-3
    diff = eval_local_many(op, xs, r, ps, Xs) - eval_local_many(op, xs, s, ps, Xs)
    slack = diff / (r - s) - gamma
    k = int(np.argmin(slack))
    worst = float(slack[k])
    return ConditionReport("proper", worst >= -1e-9, worst,
                           {"x": xs[k].tolist(), "r": float(r[k]), "s": float(s[k])}, len(xs),
                           f"declared gamma={gamma}")


def check_ellipticity(op: LocalOperator, sample_budget=1000, dim=1, seed=DEFAULT_SEED,
                      extent=2.0, zero_gap=False) -> ConditionReport:
    """F(x,r,p,X+D) <= F(x,r,p,X) for PSD D and F nondecreasing in r.

    ``worst_ratio`` is the largest observed violation (<= 0 on success).
    """
    u, xs, ps = _sample_points(sample_budget, dim, seed, extent)
    rng = np.random.default_rng(seed + 7)
    Xs = _random_symmetric(rng, len(xs), dim)
    D = np.zeros_like(Xs) if zero_gap else _random_psd(rng, len(xs), dim)
    r = 20.0 * u[:, 2 * dim] - 10.0
    s = r + 10.0 * u[:, 2 * dim + 1]
    base = eval_local_many(op, xs, r, ps, Xs)
    v_hess = eval_local_many(op, xs, r, ps, Xs + D) - base
    v_r = base - eval_local_many(op, xs, s, ps, Xs)
    scale = 1.0 + np.abs(base)
    viol = np.maximum(v_hess, v_r) / scale
    k = int(np.argmax(viol))
    worst = float(viol[k])
    return ConditionReport("F", worst <= TOL * 100, worst,
                           {"x": xs[k].tolist(), "r": float(r[k]), "X": Xs[k].tolist(),
                            "D": D[k].tolist()}, len(xs))


def check_structure(op: LocalOperator, modulus_w=None, sample_budget=2000, dim=1,
                    seed=DEFAULT_SEED, extent=2.0) -> ConditionReport:
    """Structure condition on the X = Y = O slice only.

    F(y,r,a(x-y),O) - F(x,r,a(x-y),O) <= w(a|x-y|^2 + |x-y|) for sampled
    a > 0 and x, y, with pair distances log-uniform in [1e-8, 2*extent].
    When no modulus is given one is estimated as L*s from pairs at
    distance >= 1e-2 (L = 1.1 x largest difference quotient seen there).
    """
    u = sobol(sample_budget, 2 * dim + 4, seed)
    xs = extent * (2.0 * u[:, :dim] - 1.0)
    dist = 10.0 ** (-8.0 + (8.0 + math.log10(2 * extent)) * u[:, dim])
    if dim == 1:
        direction = np.where(u[:, dim + 1] < 0.5, -1.0, 1.0)[:, None]
    else:
        th = 2 * math.pi * u[:, dim + 1]
        direction = np.stack([np.cos(th), np.sin(th)], axis=1)
    ys = xs + dist[:, None] * direction
    alpha = 10.0 ** (-2.0 + 6.0 * u[:, dim + 2])
    r = 20.0 * u[:, dim + 3] - 10.0
    ps = alpha[:, None] * (xs - ys)
    O = np.zeros((len(xs), dim, dim))
    lhs = eval_local_many(op, ys, r, ps, O) - eval_local_many(op, xs, r, ps, O)
    d = np.linalg.norm(xs - ys, axis=1)
    arg = alpha * d * d + d
    note = "only the admissible slice X = Y = O is tested"
    if modulus_w is None:
        far = d >= 1e-2
        L = 1.1 * float(np.max(np.abs(lhs[far]) / d[far])) if np.any(far) else 0.0
        w = lambda s: L * np.asarray(s, float)  # noqa: E731
        note += f"; modulus estimated as {L:.6g}*s"
    else:
        w = modulus_w
    rhs = np.asarray(w(arg), float)
    viol = lhs - rhs
    k = int(np.argmax(viol))
    worst = float(viol[k])
    return ConditionReport("structure", worst <= 1e-10, worst,
                           {"x": xs[k].tolist(), "y": ys[k].tolist(), "alpha": float(alpha[k])},
                           len(xs), note)


def check_monotone_map(G: NonlocalScalarMap, sample_budget=2000, extent=10.0, tol=1e-12,
                       seed=DEFAULT_SEED) -> ConditionReport:
    """s < t implies G(s) < G(t) + tol on sampled pairs."""
    u = sobol(sample_budget, 2, seed)
    s = extent * (2 * u[:, 0] - 1)
    t = s + 10.0 ** (-6.0 + 7.0 * u[:, 1])
    gs, gt = G(s), G(t)
    viol = gs - gt
    k = int(np.argmax(viol))
    worst = float(viol[k])
    return ConditionReport("G", worst < tol, worst, {"s": float(s[k]), "t": float(t[k])}, len(s))
