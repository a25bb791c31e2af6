"""Uniform tensor grids on a box, fields with a volume Dirichlet condition on
the complement of Omega, finite differences and multilinear interpolation."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import IndexOnBoxEdge

_SNAP = 1e-9


@dataclass(frozen=True, eq=False)
class Domain:
    """Open set Omega inside the box [a, b]^N, with exterior data g.

    ``omega`` is ``("box", lo, hi)`` for the open box (lo, hi)^N or
    ``("ball", center, radius)`` for an open ball.  ``g`` is a vectorized
    callable on (n, N) arrays and is read on all of the complement of Omega,
    not just its boundary.
    """

    dim_n: int
    box: tuple
    omega: tuple
    g: Callable
    bounded: bool = True

    def __post_init__(self):
        if self.dim_n not in (1, 2):
            raise ValueError("only N = 1 or 2 is supported")
        a, b = self.box
        if not a < b:
            raise ValueError("box must satisfy a < b")
        kind = self.omega[0]
        if kind == "box":
            lo, hi = self.omega[1], self.omega[2]
            if not (a <= lo < hi <= b):
                raise ValueError("Omega must lie inside the box")
        elif kind == "ball":
            c = np.atleast_1d(np.asarray(self.omega[1], float))
            rad = float(self.omega[2])
            if c.shape != (self.dim_n,) or rad <= 0:
                raise ValueError("ball needs a center in R^N and a positive radius")
            if np.any(c - rad < a) or np.any(c + rad > b):
                raise ValueError("Omega must lie inside the box")
        else:
            raise ValueError(f"unknown Omega kind {kind!r}")

    @classmethod
    def interval(cls, lo, hi, g, margin=1.0):
        return cls(1, (lo - margin, hi + margin), ("box", lo, hi), g)

    @classmethod
    def square(cls, lo, hi, g, margin=1.0):
        return cls(2, (lo - margin, hi + margin), ("box", lo, hi), g)

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, float).reshape(-1, self.dim_n)
        kind = self.omega[0]
        if kind == "box":
            lo, hi = self.omega[1], self.omega[2]
            return np.all((pts > lo) & (pts < hi), axis=1)
        c = np.asarray(self.omega[1], float)
        return np.sum((pts - c) ** 2, axis=1) < float(self.omega[2]) ** 2

    def margin(self) -> float:
        a, b = self.box
        kind = self.omega[0]
        if kind == "box":
            return float(min(self.omega[1] - a, b - self.omega[2]))
        c = np.asarray(self.omega[1], float)
        r = float(self.omega[2])
        return float(min(np.min(c - r - a), np.min(b - c - r)))


class Grid:
    """Uniform grid with ``n_cells`` cells per axis over the domain's box."""

    def __init__(self, domain: Domain, n_cells: int):
        if n_cells < 2:
            raise ValueError("need at least two cells per axis")
        self.domain = domain
        self.dim = domain.dim_n
        self.n_cells = int(n_cells)
        self.a, self.b = map(float, domain.box)
        self.h = (self.b - self.a) / self.n_cells
        self.axis = self.a + self.h * np.arange(self.n_cells + 1)
        self.shape = (self.n_cells + 1,) * self.dim
        self.size = int(np.prod(self.shape))
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        self.points = np.stack([m.ravel() for m in mesh], axis=1)
        self.in_omega = domain.contains(self.points)
        idx = np.stack(np.unravel_index(np.arange(self.size), self.shape), axis=1)
        self.on_edge = np.any((idx == 0) | (idx == self.n_cells), axis=1)
        if np.any(self.in_omega & self.on_edge):
            raise ValueError("Omega touches the box edge; enlarge the box")
        self.omega_index = np.flatnonzero(self.in_omega)
        self.exterior_index = np.flatnonzero(~self.in_omega)
        self.g_values = np.asarray(domain.g(self.points[self.exterior_index]), float)
        self.strides = np.array([int(np.prod(self.shape[d + 1:])) for d in range(self.dim)])

    def g(self, pts) -> np.ndarray:
        pts = np.asarray(pts, float).reshape(-1, self.dim)
        if len(pts) == 0:
            return np.zeros(0)
        return np.asarray(self.domain.g(pts), float)

    def flat(self, multi) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.shape))

    def multi(self, flat) -> tuple:
        return tuple(int(i) for i in np.unravel_index(int(flat), self.shape))

    def new_field(self, values=None) -> "GridField":
        if values is None:
            values = np.zeros(self.size)
        return GridField(self, np.asarray(values, float).reshape(self.size).copy())

    def field_from(self, fn, clamp=None) -> "GridField":
        """Field equal to ``fn`` on Omega nodes (optionally clamped) and g outside."""
        vals = np.empty(self.size)
        vals[self.exterior_index] = self.g_values
        inner = np.asarray(fn(self.points[self.omega_index]), float)
        if clamp is not None:
            inner = np.clip(inner, clamp[0], clamp[1])
        vals[self.omega_index] = inner
        return GridField(self, vals)

    def constant_field(self, c) -> "GridField":
        return GridField(self, np.full(self.size, float(c)))

    # interpolation stencil -------------------------------------------------

    def stencil(self, pts):
        """Multilinear interpolation weights for points anywhere in R^N.

        Returns ``(idx, w, outside)``: flat node indices and nonnegative
        weights of shape (n, 2^N) summing to 1, and a mask of points outside
        the box (whose weights are zero; they read g instead).
        """
        pts = np.asarray(pts, float).reshape(-1, self.dim)
        t = (pts - self.a) / self.h
        near = np.rint(t)
        t = np.where(np.abs(t - near) < _SNAP, near, t)
        outside = np.any((t < 0) | (t > self.n_cells), axis=1)
        t = np.clip(t, 0, self.n_cells)
        i0 = np.minimum(np.floor(t), self.n_cells - 1).astype(np.int64)
        frac = t - i0
        n = len(pts)
        corners = 1 << self.dim
        idx = np.zeros((n, corners), dtype=np.int64)
        w = np.ones((n, corners))
        for c in range(corners):
            for d in range(self.dim):
                bit = (c >> (self.dim - 1 - d)) & 1
                idx[:, c] += (i0[:, d] + bit) * self.strides[d]
                w[:, c] *= frac[:, d] if bit else (1.0 - frac[:, d])
        w[outside] = 0.0
        idx[outside] = 0
        return idx, w, outside


@dataclass(frozen=True)
class Differentials:
    p: np.ndarray
    X: np.ndarray


class GridField:
    """Nodal values on a :class:`Grid` (flat, row-major)."""

    def __init__(self, grid: Grid, values):
        self.grid = grid
        self.values = np.asarray(values, float).reshape(grid.size)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def copy(self):
        return GridField(self.grid, self.values.copy())

    def refresh_exterior(self):
        """Reset Omega^c nodes to g."""
        self.values[self.grid.exterior_index] = self.grid.g_values
        return self

    def as_array(self):
        return self.values.reshape(self.grid.shape)

    def sup_norm(self):
        return float(np.max(np.abs(self.values)))

    def to_csv(self) -> str:
        return field_csv(self.grid, self.values)


def field_csv(grid: Grid, values) -> str:
    """CSV with header ``x0[,x1],u``; 17 significant digits."""
    buf = io.StringIO()
    cols = [f"x{d}" for d in range(grid.dim)] + ["u"]
    buf.write(",".join(cols) + "\n")
    for pt, v in zip(grid.points, np.asarray(values, float)):
        buf.write(",".join(f"{c:.17g}" for c in (*pt, v)) + "\n")
    return buf.getvalue()


def read_field_csv(grid: Grid, text: str) -> GridField:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    header = lines[0].split(",")
    expected = [f"x{d}" for d in range(grid.dim)] + ["u"]
    if header != expected:
        raise ValueError(f"CSV header {header} does not match {expected}")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    if data.shape != (grid.size, grid.dim + 1):
        raise ValueError(f"CSV has {data.shape[0]} rows; grid has {grid.size} nodes")
    if not np.allclose(data[:, :grid.dim], grid.points, rtol=0, atol=1e-12 * (1 + abs(grid.b))):
        raise ValueError("CSV coordinates do not match the grid")
    return GridField(grid, data[:, -1])


def gradient_hessian(field: GridField, index) -> Differentials:
    """Central differences at a node (flat index or multi-index)."""
    grid = field.grid
    multi = grid.multi(index) if np.isscalar(index) else tuple(int(i) for i in index)
    if any(i <= 0 or i >= grid.n_cells for i in multi):
        raise IndexOnBoxEdge(f"node {multi} lies on the box edge")
    u = field.as_array()
    h = grid.h
    N = grid.dim
    p = np.empty(N)
    X = np.empty((N, N))
    c = u[multi]
    for d in range(N):
        plus = list(multi)
        minus = list(multi)
        plus[d] += 1
        minus[d] -= 1
        up, um = u[tuple(plus)], u[tuple(minus)]
        p[d] = (up - um) / (2 * h)
        X[d, d] = (up - 2 * c + um) / (h * h)
    if N == 2:
        i, j = multi
        X[0, 1] = X[1, 0] = (u[i + 1, j + 1] - u[i + 1, j - 1] - u[i - 1, j + 1] + u[i - 1, j - 1]) / (4 * h * h)
    return Differentials(p, X)


def sample_extended(field: GridField, y) -> np.ndarray | float:
    """Interpolated value inside the box, g outside; accepts one point or rows."""
    grid = field.grid
    pts = np.asarray(y, float)
    single = pts.ndim <= 1 and pts.size == grid.dim
    pts = pts.reshape(-1, grid.dim)
    idx, w, outside = grid.stencil(pts)
    out = np.sum(w * field.values[idx], axis=1)
    if np.any(outside):
        out[outside] = grid.g(pts[outside])
    return float(out[0]) if single else out
