"""Radial Lévy measures dq(z) = q(|z|) dz on R^M and their annular quadratures.

Only radially symmetric measures in dimension M in {1, 2} are supported.  The
power-law family ``q(z) = |z|^-(M + alpha0)`` has closed-form moments; the
density families fall back to adaptive quadrature on dyadic shells, and a
diverging integral is detected by shell contributions that stop decaying.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import DivergentTail, DomainError, NonConvergentQuadrature, ShellBudgetExceeded

MAX_SHELLS = 100_000
_DYADIC_BUDGET = 400


def sphere_measure(dim_m: int) -> float:
    """Surface measure of the unit sphere in R^M (2 for M=1, 2*pi for M=2)."""
    return 2.0 * math.pi ** (dim_m / 2.0) / math.gamma(dim_m / 2.0)


@dataclass(frozen=True)
class IntegrabilityReport:
    ok: bool
    inner_second_moment: float
    outer_mass: float
    detail: str = ""

    def __bool__(self):
        return self.ok


@dataclass(frozen=True, eq=False)
class LevyMeasure:
    """Radially symmetric Lévy measure.

    Use the constructors :meth:`power_law`, :meth:`tabulated`,
    :meth:`compact` and :meth:`radial_density` rather than building one
    directly.  ``density`` maps radii (array) to q(r).
    """

    dim_m: int
    family: str
    alpha0: float | None = None
    mu: float | None = None
    density: Callable | None = None
    support_radius: float = math.inf
    tail_exponent: float | None = None
    samples: tuple | None = None
    label: str = ""

    # constructors ----------------------------------------------------------

    @classmethod
    def power_law(cls, alpha0, dim_m=1, mu=None):
        if not 0.0 < alpha0 < 2.0:
            raise ValueError(f"alpha0 must lie in (0, 2), got {alpha0}")
        _check_dim(dim_m)
        _check_mu(mu)
        return cls(dim_m=dim_m, family="power_law", alpha0=float(alpha0), mu=mu,
                   label=f"PowerLaw(alpha0={alpha0}, M={dim_m})")

    @classmethod
    def tabulated(cls, radii, values, tail_exponent, dim_m=1, mu=None, validate=True):
        """Log-log interpolated radial density.

        Below the first sample the density continues as the power law of the
        first segment; beyond the last it decays like r^-(M + tail_exponent).
        """
        _check_dim(dim_m)
        _check_mu(mu)
        r = np.asarray(radii, float)
        q = np.asarray(values, float)
        if r.ndim != 1 or r.size < 2 or np.any(np.diff(r) <= 0) or r[0] <= 0:
            raise ValueError("radii must be positive, strictly increasing, at least two")
        if q.shape != r.shape or np.any(q <= 0):
            raise ValueError("density samples must be positive and match the radii")
        lr, lq = np.log(r), np.log(q)
        inner_slope = (lq[1] - lq[0]) / (lr[1] - lr[0])
        outer_slope = -(dim_m + float(tail_exponent))

        def density(rad):
            rad = np.asarray(rad, float)
            lrad = np.log(rad)
            out = np.interp(lrad, lr, lq)
            out = np.where(lrad < lr[0], lq[0] + inner_slope * (lrad - lr[0]), out)
            out = np.where(lrad > lr[-1], lq[-1] + outer_slope * (lrad - lr[-1]), out)
            return np.exp(out)

        m = cls(dim_m=dim_m, family="tabulated", mu=mu, density=density,
                tail_exponent=float(tail_exponent), samples=(tuple(r), tuple(q)),
                label=f"Tabulated(n={r.size}, tail={tail_exponent}, M={dim_m})")
        return _validated(m, validate)

    @classmethod
    def compact(cls, density, support_radius, dim_m=1, mu=None, validate=True):
        """Density supported on |z| <= support_radius."""
        _check_dim(dim_m)
        _check_mu(mu)
        if not support_radius > 0:
            raise ValueError("support radius must be positive")
        m = cls(dim_m=dim_m, family="compact", mu=mu, density=_vectorize(density),
                support_radius=float(support_radius),
                label=f"Compact(R={support_radius}, M={dim_m})")
        return _validated(m, validate)

    @classmethod
    def radial_density(cls, density, dim_m=1, mu=None, validate=True, label="Custom"):
        """Arbitrary radial density on all of R^M minus the origin."""
        _check_dim(dim_m)
        _check_mu(mu)
        m = cls(dim_m=dim_m, family="custom", mu=mu, density=_vectorize(density), label=label)
        return _validated(m, validate)

    # pointwise -------------------------------------------------------------

    @property
    def omega(self) -> float:
        return sphere_measure(self.dim_m)

    def q(self, z) -> np.ndarray:
        """Density at points z (shape (n, M) or (n,) when M=1)."""
        z = np.asarray(z, float)
        r = np.abs(z) if (z.ndim <= 1 and self.dim_m == 1) else np.linalg.norm(z, axis=-1)
        return self.radial_q(r)

    def radial_q(self, r) -> np.ndarray:
        r = np.asarray(r, float)
        if self.family == "power_law":
            with np.errstate(divide="ignore"):
                return r ** (-(self.dim_m + self.alpha0))
        out = self.density(r)
        if self.family == "compact":
            out = np.where(r <= self.support_radius, out, 0.0)
        return out

    def radial_weight(self, r) -> np.ndarray:
        """Mass density in the radius: omega * r^(M-1) * q(r)."""
        r = np.asarray(r, float)
        with np.errstate(over="ignore"):
            return self.omega * r ** (self.dim_m - 1) * self.radial_q(r)

    # radial integrals --------------------------------------------------------

    def radial_moment(self, a, b, k) -> float:
        """Integral of |z|^k dq over the annulus a <= |z| < b (finite b)."""
        if b <= a:
            return 0.0
        if self.family == "power_law":
            e = k - self.alpha0
            if e == 0.0:
                return self.omega * math.log(b / a)
            if a == 0.0:
                if e < 0:
                    raise DivergentTail(f"moment of order {k} diverges at the origin")
                return self.omega * b ** e / e
            return self.omega * (b ** e - a ** e) / e
        if self.family == "compact":
            b = min(b, self.support_radius)
            if b <= a:
                return 0.0
        if a == 0.0:
            return _dyadic_inward(lambda r: r ** k * self.radial_weight(r), b)[0]
        return _quad(lambda r: r ** k * self.radial_weight(r), a, b)

    def shell_mass(self, a, b) -> float:
        return self.radial_moment(a, b, 0.0)


def _check_dim(dim_m):
    if dim_m not in (1, 2):
        raise ValueError(f"jump dimension M must be 1 or 2, got {dim_m}")


def _check_mu(mu):
    if mu is not None and not 0.0 <= mu < 2.0:
        raise ValueError(f"mu must lie in [0, 2), got {mu}")


def _vectorize(fn):
    def wrapped(r):
        out = fn(np.asarray(r, float))
        return np.broadcast_to(np.asarray(out, float), np.shape(r)).copy()
    return wrapped


def _validated(measure, validate):
    if validate:
        report = check_integrability(measure)
        if not report.ok:
            raise ValueError(f"{measure.label} violates the integrability condition: {report.detail}")
    return measure


def _quad(fn, a, b):
    val, _err = integrate.quad(lambda r: float(fn(np.array(r))), a, b, limit=200,
                               epsabs=0.0, epsrel=1e-12)
    return val


def _dyadic(fn, start, step, rtol=1e-13, budget=_DYADIC_BUDGET, stop=None):
    """Sum fn over shells [s, s*step] (step>1 outward, step<1 inward).

    Returns (total, converged, growing).  ``growing`` flags a non-decaying
    sequence of shell contributions, the numerical signature of divergence.
    """
    total = 0.0
    contributions = []
    r = start
    for _ in range(budget):
        nxt = r * step
        lo, hi = (r, nxt) if step > 1 else (nxt, r)
        if stop is not None and step > 1 and lo >= stop:
            return total, True, False
        if stop is not None and step > 1:
            hi = min(hi, stop)
        try:
            c = _quad(fn, lo, hi)
        except (ArithmeticError, DomainError):
            c = math.inf
        if not math.isfinite(c):
            # density overflowed: certainly not integrable over this shell
            return total, False, True
        contributions.append(abs(c))
        total += c
        r = nxt
        if len(contributions) >= 8:
            recent = contributions[-4:]
            if max(recent) <= rtol * abs(total) or max(recent) == 0.0:
                return total, True, False
    tail = contributions[-16:]
    growing = all(tail[i + 1] >= 0.999 * tail[i] for i in range(len(tail) - 1))
    return total, False, growing


def _dyadic_inward(fn, b):
    total, ok, growing = _dyadic(fn, b, 0.5)
    if not ok:
        if growing:
            raise DivergentTail("integral diverges at the origin")
        raise NonConvergentQuadrature("inner integral did not settle within budget")
    return total, ok


# public operations -----------------------------------------------------------


def check_integrability(measure: LevyMeasure) -> IntegrabilityReport:
    """Is the integral of min(|z|^2, 1) dq finite?"""
    if measure.family == "power_law":
        a = measure.alpha0
        ok = 0.0 < a < 2.0
        inner = measure.omega / (2.0 - a) if ok else math.inf
        outer = measure.omega / a if ok else math.inf
        return IntegrabilityReport(ok, inner, outer, "closed form")
    w = measure.radial_weight
    inner, ok_in, grow_in = _dyadic(lambda r: r * r * w(r), 1.0, 0.5)
    if measure.family == "compact" and measure.support_radius <= 1.0:
        outer, ok_out, grow_out = 0.0, True, False
    elif measure.family == "compact":
        outer, ok_out, grow_out = _quad(w, 1.0, measure.support_radius), True, False
    else:
        outer, ok_out, grow_out = _dyadic(w, 1.0, 2.0)
    details = []
    if not ok_in:
        if not grow_in:
            raise NonConvergentQuadrature("inner second moment did not settle within budget")
        details.append("second moment diverges at the origin")
    if not ok_out:
        if not grow_out:
            raise NonConvergentQuadrature("outer mass did not settle within budget")
        details.append("tail mass diverges")
    ok = ok_in and ok_out
    return IntegrabilityReport(ok, inner if ok_in else math.inf, outer if ok_out else math.inf,
                               "; ".join(details) or "adaptive dyadic quadrature")


def small_ball_second_moment(measure: LevyMeasure, r: float) -> float:
    """Integral of |z|^2 dq over |z| < r."""
    if not r > 0:
        raise ValueError("radius must be positive")
    return measure.radial_moment(0.0, r, 2.0)


def tail_moment(measure: LevyMeasure, r: float, kappa: float) -> float:
    """Integral of |z|^kappa dq over |z| >= r; DivergentTail when infinite."""
    if not r > 0:
        raise ValueError("radius must be positive")
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if measure.family == "power_law":
        a = measure.alpha0
        if kappa >= a:
            raise DivergentTail(f"tail moment of order {kappa} >= alpha0={a} diverges")
        return measure.omega * r ** (kappa - a) / (a - kappa)
    fn = lambda s: s ** kappa * measure.radial_weight(s)  # noqa: E731
    if measure.family == "compact":
        return _quad(fn, r, measure.support_radius) if r < measure.support_radius else 0.0
    total, ok, growing = _dyadic(fn, r, 2.0)
    if not ok:
        if growing:
            raise DivergentTail(f"tail moment of order {kappa} diverges")
        raise NonConvergentQuadrature("tail moment did not settle within budget")
    return total


def tail_mass(measure: LevyMeasure, r: float) -> float:
    return tail_moment(measure, r, 0.0)


# quadrature ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AnnularQuadrature:
    """Far-field nodes for epsilon <= |z| < z_max.

    Nodes come in exact antipodal pairs: ``nodes[k + n/2] == -nodes[k]``
    bit for bit, so odd integrands cancel pairwise.
    """

    dim_m: int
    epsilon: float
    z_max: float
    shells: tuple
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    exact_second_moment_inner: float = 0.0
    tail_mass_outer: float = 0.0
    nodes_per_shell: int = 8
    angles: int = 1

    @property
    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.nodes, axis=1)

    @property
    def inner(self) -> np.ndarray:
        """Mask of nodes inside the compensated ball |z| <= 1."""
        return self.radii <= 1.0

    @property
    def half(self) -> int:
        return self.nodes.shape[0] // 2

    def shell_of_node(self) -> np.ndarray:
        per_shell = self.nodes_per_shell * max(self.angles // 2, 1)
        idx = np.arange(self.half) // per_shell
        return np.concatenate([idx, idx])

    def total_weight(self) -> float:
        return math.fsum(self.weights.tolist())


def shell_radii(epsilon, z_max, growth_ratio=2.0, max_shell_width=math.inf,
                max_shells=MAX_SHELLS):
    """Geometric shell boundaries from epsilon to z_max, always including 1."""
    if epsilon >= z_max:
        return [float(epsilon)]
    edges = [float(epsilon)]
    r = float(epsilon)
    while r < z_max:
        nxt = min(r * growth_ratio, r + max_shell_width)
        if r < 1.0 < nxt:
            nxt = 1.0
        nxt = min(nxt, float(z_max))
        edges.append(nxt)
        r = nxt
        if len(edges) - 1 > max_shells:
            raise ShellBudgetExceeded(f"more than {max_shells} shells requested")
    return edges


def build_quadrature(measure: LevyMeasure, epsilon: float, z_max: float,
                     nodes_per_shell: int | None = None, growth_ratio: float = 2.0,
                     angles: int | None = None, max_shell_width: float = math.inf,
                     max_shells: int = MAX_SHELLS) -> AnnularQuadrature:
    """Gauss-Legendre nodes in log-radius on geometric shells.

    Radial weights are rescaled so each shell carries its exact mass; on
    the sphere M=1 uses the two endpoints and M=2 ``angles`` equispaced
    directions.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if z_max < epsilon:
        raise ValueError("z_max must be at least epsilon")
    if not growth_ratio > 1:
        raise ValueError("growth_ratio must exceed 1")
    m = measure.dim_m
    if nodes_per_shell is None:
        nodes_per_shell = 8
    if angles is None:
        angles = 2 if m == 1 else 16
    if m == 1:
        angles = 2
    if angles % 2:
        raise ValueError("number of angles must be even")
    edges = shell_radii(epsilon, z_max, growth_ratio, max_shell_width, max_shells)
    shells = tuple(zip(edges[:-1], edges[1:]))

    gl_x, gl_w = np.polynomial.legendre.leggauss(nodes_per_shell)
    if m == 1:
        dirs = np.array([[1.0]])
    else:
        theta = 2.0 * math.pi * np.arange(angles // 2) / angles
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    dir_w = 1.0 / angles

    pos_nodes, pos_w = [], []
    for a, b in shells:
        la, lb = math.log(a), math.log(b)
        s = 0.5 * (lb - la) * gl_x + 0.5 * (lb + la)
        r = np.exp(s)
        w = 0.5 * (lb - la) * gl_w * measure.radial_weight(r) * r
        mass = measure.shell_mass(a, b)
        tot = math.fsum(w.tolist())
        if tot > 0:
            w = w * (mass / tot)
        for d in dirs:
            pos_nodes.append(r[:, None] * d[None, :])
            pos_w.append(w * dir_w)
    if pos_nodes:
        half_nodes = np.concatenate(pos_nodes)
        half_w = np.concatenate(pos_w)
    else:
        half_nodes = np.zeros((0, m))
        half_w = np.zeros(0)
    nodes = np.concatenate([half_nodes, -half_nodes])
    weights = np.concatenate([half_w, half_w])
    inner = small_ball_second_moment(measure, epsilon)
    outer = tail_mass(measure, z_max)
    return AnnularQuadrature(dim_m=m, epsilon=float(epsilon), z_max=float(z_max), shells=shells,
                             nodes=nodes, weights=weights, exact_second_moment_inner=inner,
                             tail_mass_outer=outer, nodes_per_shell=nodes_per_shell,
                             angles=angles)
