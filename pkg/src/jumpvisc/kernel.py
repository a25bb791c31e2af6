"""Jump maps beta(x, p, z) and sampling validators for their growth,
Lipschitz and nondegeneracy conditions.

Every built-in kernel is linear in z: ``beta(x, p, z) = A(x, p) @ z`` with an
N x M matrix ``A``.  The nonlocal operator relies on this to integrate the
near field in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._sampling import DEFAULT_SEED, ball_from_unit, sobol
from .errors import DimensionMismatch, GradientDependentKernel

VARIANTS = ("identity", "radial_scale", "rotational", "gradient_direction", "axis", "custom")

REL_TOL = 1e-12


@dataclass(frozen=True)
class KernelConstants:
    B0: float = 1.0
    B1: float = 1.0
    B2: float = 1.0
    B3: float = 1.0
    R: float = 1.0

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be at least 1")
        for name in ("B0", "B1", "B2", "B3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True, eq=False)
class JumpKernel:
    variant: str
    dim_n: int
    dim_m: int
    constants: KernelConstants = field(default_factory=KernelConstants)
    eps0: float = 0.0
    axis: int = 0
    func: Callable | None = None
    b1: Callable | None = None
    custom_gradient_dependent: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.dim_n not in (1, 2) or self.dim_m not in (1, 2):
            raise ValueError("dimensions N and M must be 1 or 2")
        if self.dim_m > self.dim_n:
            raise ValueError("the jump dimension M may not exceed N")
        v = self.variant
        if v in ("identity", "radial_scale") and self.dim_m != self.dim_n:
            raise ValueError(f"{v} kernel needs M = N")
        if v == "rotational" and (self.dim_n, self.dim_m) != (2, 1):
            raise ValueError("rotational kernel needs N=2, M=1")
        if v in ("gradient_direction", "axis") and self.dim_m != 1:
            raise ValueError(f"{v} kernel needs M=1")
        if v == "gradient_direction" and not self.eps0 > 0:
            raise ValueError("gradient_direction kernel needs eps0 > 0")
        if v == "axis" and not 0 <= self.axis < self.dim_n:
            raise ValueError("axis index out of range")
        if v == "custom" and self.func is None:
            raise ValueError("custom kernel needs a function handle")

    # convenience constructors ---------------------------------------------

    @classmethod
    def identity(cls, dim=1, **constants):
        return cls("identity", dim, dim, KernelConstants(**constants))

    @classmethod
    def radial_scale(cls, dim=1, **constants):
        return cls("radial_scale", dim, dim, KernelConstants(**constants))

    @classmethod
    def rotational(cls, **constants):
        return cls("rotational", 2, 1, KernelConstants(**constants))

    @classmethod
    def gradient_direction(cls, dim_n=2, eps0=0.1, **constants):
        return cls("gradient_direction", dim_n, 1, KernelConstants(**constants), eps0=eps0)

    @classmethod
    def axis_kernel(cls, axis, dim_n=2, **constants):
        return cls("axis", dim_n, 1, KernelConstants(**constants), axis=axis)

    @classmethod
    def custom(cls, func, dim_n, dim_m, b1=None, gradient_dependent=True, **constants):
        """``func(x, p, z)`` for single points; must be continuous."""
        return cls("custom", dim_n, dim_m, KernelConstants(**constants), func=func, b1=b1,
                   custom_gradient_dependent=bool(gradient_dependent))

    # structure ---------------------------------------------------------------

    @property
    def gradient_dependent(self) -> bool:
        if self.variant == "custom":
            return self.custom_gradient_dependent
        return self.variant == "gradient_direction"

    def linear_maps(self, xs, ps=None) -> np.ndarray:
        """Matrices A(x, p) for each row, shape (n, N, M)."""
        xs = np.asarray(xs, float).reshape(-1, self.dim_n)
        n = xs.shape[0]
        ps = np.zeros_like(xs) if ps is None else np.asarray(ps, float).reshape(-1, self.dim_n)
        N, M = self.dim_n, self.dim_m
        v = self.variant
        if v == "identity":
            return np.broadcast_to(np.eye(N), (n, N, N)).copy()
        if v == "radial_scale":
            scale = 0.5 * np.linalg.norm(xs, axis=1)
            return scale[:, None, None] * np.eye(N)[None]
        if v == "rotational":
            return np.stack([xs[:, 1], -xs[:, 0]], axis=1)[:, :, None]
        if v == "gradient_direction":
            norm = np.linalg.norm(ps, axis=1)
            return (ps / (norm + self.eps0)[:, None])[:, :, None]
        if v == "axis":
            a = np.zeros((n, N, 1))
            a[:, self.axis, 0] = 1.0
            return a
        out = np.empty((n, N, M))
        eye = np.eye(M)
        for i in range(n):
            for k in range(M):
                out[i, :, k] = np.asarray(self.func(xs[i], ps[i], eye[k]), float)
        return out

    def evaluate(self, x, p, z) -> np.ndarray:
        """beta(x, p, z) for a single point."""
        x = np.atleast_1d(np.asarray(x, float))
        p = np.atleast_1d(np.asarray(p, float))
        z = np.atleast_1d(np.asarray(z, float))
        if x.shape != (self.dim_n,) or p.shape != (self.dim_n,) or z.shape != (self.dim_m,):
            raise DimensionMismatch(
                f"expected x, p in R^{self.dim_n} and z in R^{self.dim_m}, "
                f"got shapes {x.shape}, {p.shape}, {z.shape}"
            )
        if self.variant == "custom":
            return np.asarray(self.func(x, p, z), float)
        return self.linear_maps(x[None], p[None])[0] @ z

    def evaluate_many(self, xs, ps, zs) -> np.ndarray:
        xs = np.asarray(xs, float).reshape(-1, self.dim_n)
        ps = np.asarray(ps, float).reshape(-1, self.dim_n)
        zs = np.asarray(zs, float).reshape(-1, self.dim_m)
        if self.variant == "custom":
            return np.array([self.func(x, p, z) for x, p, z in zip(xs, ps, zs)], float)
        return np.einsum("inm,im->in", self.linear_maps(xs, ps), zs)

    def envelope(self, xs) -> np.ndarray:
        """Growth envelope b1(x)."""
        xs = np.asarray(xs, float).reshape(-1, self.dim_n)
        if self.b1 is not None:
            return np.array([float(self.b1(x)) for x in xs])
        r = np.linalg.norm(xs, axis=1)
        v = self.variant
        if v == "radial_scale":
            return 0.5 * r
        if v == "rotational":
            return r
        if v == "custom":
            c = self.constants
            return np.where(r < 1.0, c.B0, np.maximum(c.B0, c.B1 * r))
        return np.ones_like(r)


@dataclass(frozen=True)
class ConditionReport:
    condition: str
    passed: bool
    worst_ratio: float
    witness: dict | None = None
    samples: int = 0
    note: str = ""

    def to_dict(self):
        return {
            "condition": self.condition,
            "pass": bool(self.passed),
            "worst_ratio": float(self.worst_ratio),
            "witness": self.witness,
            "samples": int(self.samples),
            "note": self.note,
        }


def _samples(kernel, n, z_max, x_radius, p_radius, seed):
    N, M = kernel.dim_n, kernel.dim_m
    u = sobol(n, 6, seed)
    xs = ball_from_unit(u[:, 0:2], N, x_radius)
    ps = ball_from_unit(u[:, 2:4], N, p_radius)
    zs = ball_from_unit(u[:, 4:6], M, z_max)
    return xs, ps, zs


def _witness(**arrays):
    return {k: np.asarray(v, float).ravel().tolist() for k, v in arrays.items()}


def verify_growth(kernel: JumpKernel, sample_budget=10_000, z_max=10.0, seed=None) -> ConditionReport:
    """Sampled check of |beta| <= b1(x)|z| with b1 <= B0 on |x| < 1 and
    b1 <= B1|x| on |x| >= R."""
    c = kernel.constants
    xs, ps, zs = _samples(kernel, sample_budget, z_max, 10.0 * c.R, 10.0, _seed(seed))
    beta = np.linalg.norm(kernel.evaluate_many(xs, ps, zs), axis=1)
    rx = np.linalg.norm(xs, axis=1)
    rz = np.linalg.norm(zs, axis=1)
    env = np.where(rx < 1.0, c.B0, np.where(rx >= c.R, c.B1 * rx, kernel.envelope(xs)))
    denom = env * rz
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(denom > 0, beta / denom, np.where(beta > 0, np.inf, 0.0))
    k = int(np.argmax(ratio))
    worst = float(ratio[k])
    return ConditionReport("beta", worst <= 1.0 + REL_TOL, worst,
                           _witness(x=xs[k], p=ps[k], z=zs[k]), len(xs),
                           "b1 unconstrained on 1 <= |x| < R beyond the kernel's own envelope")


def verify_lipschitz(kernel: JumpKernel, sample_budget=10_000, z_max=10.0, seed=None) -> ConditionReport:
    """Sampled check of |beta(x,p,z) - beta(x',p,z)| <= B2 |x - x'| |z|."""
    c = kernel.constants
    s = _seed(seed)
    xs, ps, zs = _samples(kernel, sample_budget, z_max, 10.0 * c.R, 10.0, s)
    u = sobol(len(xs), 3, s + 1)
    # offsets log-uniform between 1e-6 and 10 so both close and far pairs occur
    scale = 10.0 ** (-6.0 + 7.0 * u[:, 0])
    off = ball_from_unit(np.column_stack([np.ones(len(xs)), u[:, 1]]), kernel.dim_n, 1.0)
    xs2 = xs + scale[:, None] * off
    d_beta = np.linalg.norm(kernel.evaluate_many(xs, ps, zs) - kernel.evaluate_many(xs2, ps, zs), axis=1)
    denom = c.B2 * np.linalg.norm(xs - xs2, axis=1) * np.linalg.norm(zs, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(denom > 0, d_beta / denom, np.where(d_beta > 0, np.inf, 0.0))
    k = int(np.argmax(ratio))
    worst = float(ratio[k])
    # absolute floor absorbs cancellation in x - x' when the offset is tiny
    floor = 1e-9 * np.linalg.norm(zs, axis=1) * (1 + np.linalg.norm(xs, axis=1))
    ok = bool(np.all(d_beta <= denom * (1 + REL_TOL) + floor))
    return ConditionReport("betacont", ok, worst,
                           _witness(x=xs[k], x_prime=xs2[k], p=ps[k], z=zs[k]), len(xs),
                           "pairs with offsets log-uniform in [1e-6, 10]")


def verify_nondegeneracy(kernel: JumpKernel, sample_budget=10_000, seed=None) -> ConditionReport:
    """Sampled check of |x + beta(x, z)| >= B3 |x| for |x| >= R, |z| <= 1."""
    if kernel.gradient_dependent:
        raise GradientDependentKernel(
            "nondegeneracy is stated for gradient-independent kernels beta(x, z)")
    c = kernel.constants
    s = _seed(seed)
    u = sobol(sample_budget, 4, s)
    # |x| uniform in [R, 10R]; |z| uniform in [0, 1]
    rad = c.R + 9.0 * c.R * u[:, 0]
    xs = ball_from_unit(np.column_stack([np.ones(len(u)), u[:, 1]]), kernel.dim_n, 1.0) * rad[:, None]
    zs = ball_from_unit(u[:, 2:4], kernel.dim_m, 1.0)
    # include the extreme |z| = 1 points the bound is sharpest at
    zs_edge = zs / np.maximum(np.linalg.norm(zs, axis=1), 1e-300)[:, None]
    xs = np.concatenate([xs, xs])
    zs = np.concatenate([zs, zs_edge])
    moved = np.linalg.norm(xs + kernel.evaluate_many(xs, np.zeros_like(xs), zs), axis=1)
    rx = np.linalg.norm(xs, axis=1)
    ratio = moved / (c.B3 * rx) if c.B3 > 0 else np.full_like(rx, np.inf)
    k = int(np.argmin(ratio))
    worst = float(ratio[k])
    return ConditionReport("unbounded2", worst >= 1.0 - REL_TOL, worst,
                           _witness(x=xs[k], z=zs[k]), len(xs),
                           "worst_ratio is min |x+beta| / (B3 |x|); pass needs >= 1")


def orthogonality_residual(kernel: JumpKernel, sample_budget=10_000, z_max=10.0, seed=None) -> float:
    """max |<beta, x>| / (|beta| |x|) over samples (zero for the rotational kernel).

    Scale-free, so rounding in beta does not grow with |x| and |z|.
    """
    xs, ps, zs = _samples(kernel, sample_budget, z_max, 10.0 * kernel.constants.R, 10.0, _seed(seed))
    beta = kernel.evaluate_many(xs, ps, zs)
    scale = np.linalg.norm(beta, axis=1) * np.linalg.norm(xs, axis=1)
    dots = np.abs(np.sum(beta * xs, axis=1))
    keep = scale > 0
    return float(np.max(dots[keep] / scale[keep])) if np.any(keep) else 0.0


def _seed(seed):
    return DEFAULT_SEED if seed is None else int(seed)


def frobenius_sq(A) -> np.ndarray:
    """Squared Frobenius norms of a stack of matrices."""
    return np.einsum("inm,inm->i", A, A)


__all__ = [
    "JumpKernel",
    "KernelConstants",
    "ConditionReport",
    "verify_growth",
    "verify_lipschitz",
    "verify_nondegeneracy",
    "orthogonality_residual",
    "frobenius_sq",
]
