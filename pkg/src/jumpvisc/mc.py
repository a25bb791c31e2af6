"""Monte Carlo for the linear problem  gamma u - f - I[u] = 0,  u = g off Omega.

With X the pure-jump process generated by I (jumps smaller than eps_cut
dropped) and tau its exit time from Omega,

    u(x) = E[ int_0^tau e^{-gamma t} f(X_t) dt + e^{-gamma tau} g(X_tau) ].

Paths are grouped in fixed-size blocks, each with its own Philox stream
keyed by (seed, probe, block).  Block sums are combined with ``math.fsum``
in block order, so results do not depend on the number of threads.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._sampling import DEFAULT_SEED
from .errors import UnsupportedConfiguration
from .measure import LevyMeasure, build_quadrature, tail_mass

BLOCK = 4096


@dataclass(frozen=True)
class PathConfig:
    eps_cut: float = 0.01
    dt_drift: float = 0.01
    n_paths: int = 100_000
    seed: int = DEFAULT_SEED
    t_max: float | None = None
    probes: tuple = ((0.0,),)
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.eps_cut < 1:
            raise ValueError("eps_cut must lie in (0, 1)")
        if self.n_paths < 2:
            raise ValueError("need at least two paths")


@dataclass(frozen=True)
class McEstimate:
    x: tuple
    mean: float
    std_error: float
    n_paths: int
    capped_fraction: float
    bias_bound: float

    def to_dict(self):
        return {"x": list(self.x), "mean": self.mean, "std_error": self.std_error,
                "n_paths": self.n_paths, "capped_fraction": self.capped_fraction,
                "bias_bound": self.bias_bound}


def estimates_json(estimates) -> str:
    return json.dumps([e.to_dict() for e in estimates], indent=2, sort_keys=True)


def _radii(measure: LevyMeasure, eps, n, rng):
    """|z| >= eps with density proportional to the radial weight."""
    u = rng.random(n)
    if measure.family == "power_law":
        return eps * u ** (-1.0 / measure.alpha0)
    # numeric inverse CDF on a log grid for other families
    lam = tail_mass(measure, eps)
    top = eps
    while tail_mass(measure, top) > 1e-12 * lam and top < 1e12:
        top *= 2.0
    grid = np.geomspace(eps, top, 4097)
    masses = np.array([measure.shell_mass(a, b) for a, b in zip(grid[:-1], grid[1:])])
    cdf = np.concatenate([[0.0], np.cumsum(masses)]) / lam
    return np.interp(np.minimum(u, cdf[-1]), cdf, grid)


def _directions(dim_m, n, rng):
    if dim_m == 1:
        return np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None]
    th = 2.0 * math.pi * rng.random(n)
    return np.stack([np.cos(th), np.sin(th)], axis=1)


def sample_jumps(measure: LevyMeasure, eps_cut, n, rng) -> np.ndarray:
    """n draws from dq restricted to |z| >= eps_cut, normalized."""
    r = _radii(measure, eps_cut, n, rng)
    return r[:, None] * _directions(measure.dim_m, n, rng)


def sample_jump(measure: LevyMeasure, eps_cut, rng) -> np.ndarray:
    return sample_jumps(measure, eps_cut, 1, rng)[0]


def _drift_fn(kernel, measure, eps_cut):
    """b(x) = -int_{eps_cut <= |z| <= 1} beta(x, 0, z) dq, or None when zero."""
    if kernel.variant != "custom" or eps_cut >= 1.0:
        return None
    q = build_quadrature(measure, eps_cut, 1.0, nodes_per_shell=16)
    w = q.weights

    def drift(xs):
        out = np.zeros_like(xs)
        for j in range(len(w)):
            z = np.broadcast_to(q.nodes[j], (len(xs), q.dim_m))
            out -= w[j] * kernel.evaluate_many(xs, np.zeros_like(xs), z)
        return out
    return drift


def _check(spec):
    local = spec.local
    if not local.is_linear or local.c != 0.0:
        raise UnsupportedConfiguration("Monte Carlo needs F = gamma r - f(x) without diffusion")
    if len(spec.terms) != 1 or spec.terms[0].G.form != "identity":
        raise UnsupportedConfiguration("Monte Carlo needs a single term with G = identity")
    if spec.terms[0].kernel.gradient_dependent:
        raise UnsupportedConfiguration("Monte Carlo needs a gradient-independent kernel")


def _block(spec, x0, n, rng, cfg, lam, t_max, drift):
    term = spec.terms[0]
    kernel, measure = term.kernel, term.measure
    gamma = spec.local.gamma
    f = spec.local.f
    dom = spec.grid.domain
    N = spec.grid.dim
    X = np.repeat(np.asarray(x0, float)[None], n, 0)
    t = np.zeros(n)
    acc = np.zeros(n)
    alive = np.ones(n, bool)
    capped = np.zeros(n, bool)
    while np.any(alive):
        idx = np.flatnonzero(alive)
        m = len(idx)
        wait = rng.exponential(1.0 / lam, m) if lam > 0 else np.full(m, np.inf)
        t_end = np.minimum(t[idx] + wait, t_max)
        xs = X[idx]
        if drift is None:
            fx = np.asarray(f(xs), float)
            acc[idx] += fx * (np.exp(-gamma * t[idx]) - np.exp(-gamma * t_end)) / gamma
        else:
            tt = t[idx].copy()
            while True:
                moving = tt < t_end
                if not np.any(moving):
                    break
                h = np.minimum(cfg.dt_drift, t_end - tt)
                fx = np.asarray(f(xs), float)
                acc[idx] += np.where(moving, fx * (np.exp(-gamma * tt) - np.exp(-gamma * (tt + h))) / gamma, 0.0)
                xs = xs + np.where(moving[:, None], h[:, None] * drift(xs), 0.0)
                tt = tt + np.where(moving, h, 0.0)
            X[idx] = xs
            out = ~dom.contains(xs)
            if np.any(out):
                ko = idx[out]
                acc[ko] += np.exp(-gamma * t_end[out]) * np.asarray(spec.grid.g(xs[out]), float)
                alive[ko] = False
                t[ko] = t_end[out]
                keep = ~out
                idx, t_end, xs = idx[keep], t_end[keep], xs[keep]
        t[idx] = t_end
        hit_cap = t_end >= t_max
        if np.any(hit_cap):
            kc = idx[hit_cap]
            acc[kc] += math.exp(-gamma * t_max) * np.asarray(spec.grid.g(X[kc]), float)
            alive[kc] = False
            capped[kc] = True
        go = idx[~hit_cap]
        if not len(go):
            continue
        z = sample_jumps(measure, cfg.eps_cut, len(go), rng)
        if kernel.variant == "custom":
            beta = kernel.evaluate_many(X[go], np.zeros((len(go), N)), z)
        else:
            beta = np.einsum("inm,im->in", kernel.linear_maps(X[go]), z)
        X[go] = X[go] + beta
        out = ~dom.contains(X[go])
        if np.any(out):
            ko = go[out]
            acc[ko] += np.exp(-gamma * t[ko]) * np.asarray(spec.grid.g(X[ko]), float)
            alive[ko] = False
    return acc, int(np.count_nonzero(capped))


def simulate_value(spec, cfg: PathConfig) -> list:
    """One McEstimate per probe in ``cfg.probes``."""
    _check(spec)
    term = spec.terms[0]
    gamma = spec.local.gamma
    lam = tail_mass(term.measure, cfg.eps_cut)
    t_max = cfg.t_max if cfg.t_max is not None else 50.0 / gamma
    drift = _drift_fn(term.kernel, term.measure, cfg.eps_cut)
    N = spec.grid.dim
    xs_all = spec.grid.points
    f_sup = float(np.max(np.abs(spec.local.source(xs_all)))) if len(xs_all) else 0.0
    g_sup = float(np.max(np.abs(spec.grid.g(xs_all)))) if len(xs_all) else 0.0
    bias = math.exp(-gamma * t_max) * (max(g_sup, f_sup / gamma) + g_sup)

    out = []
    for p_idx, x0 in enumerate(cfg.probes):
        x0 = tuple(float(c) for c in np.atleast_1d(np.asarray(x0, float)))
        if len(x0) != N:
            raise ValueError(f"probe {x0} is not a point of R^{N}")
        if not spec.grid.domain.contains(np.array([x0]))[0]:
            val = float(spec.grid.g(np.array([x0]))[0])
            out.append(McEstimate(x0, val, 0.0, cfg.n_paths, 0.0, 0.0))
            continue
        sizes = [min(BLOCK, cfg.n_paths - s) for s in range(0, cfg.n_paths, BLOCK)]

        def run(k):
            ss = np.random.SeedSequence(cfg.seed, spawn_key=(p_idx, k))
            rng = np.random.Generator(np.random.Philox(ss))
            acc, nc = _block(spec, x0, sizes[k], rng, cfg, lam, t_max, drift)
            return math.fsum(acc.tolist()), math.fsum((acc * acc).tolist()), nc

        if cfg.threads > 1 and len(sizes) > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
                parts = list(ex.map(run, range(len(sizes))))
        else:
            parts = [run(k) for k in range(len(sizes))]
        n = cfg.n_paths
        s1 = math.fsum(p[0] for p in parts)
        s2 = math.fsum(p[1] for p in parts)
        mean = s1 / n
        var = max(s2 / n - mean * mean, 0.0) * n / (n - 1)
        capped = sum(p[2] for p in parts) / n
        out.append(McEstimate(x0, mean, math.sqrt(var / n), n, capped, bias))
    return out
