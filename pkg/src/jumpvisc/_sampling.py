"""Quasi-random sample generation for the condition validators."""

import math

import numpy as np
from scipy.stats import qmc

DEFAULT_SEED = 20240531


def sobol(n, dim, seed=DEFAULT_SEED):
    """At least ``n`` scrambled Sobol points in [0, 1)^dim (rounded up to 2^k)."""
    m = max(1, math.ceil(math.log2(max(n, 2))))
    return qmc.Sobol(d=dim, scramble=True, seed=seed).random_base2(m)


def ball_from_unit(u, dim, radius):
    """Map unit-cube columns to points with |x| uniform in [0, radius].

    Uses ``dim`` columns of ``u``: one for the radius, the rest for the
    direction (a sign for dim=1, an angle for dim=2).
    """
    rad = radius * u[:, 0]
    if dim == 1:
        sign = np.where(u[:, 1] < 0.5, -1.0, 1.0)
        return (rad * sign)[:, None]
    theta = 2.0 * math.pi * u[:, 1]
    return np.stack([rad * np.cos(theta), rad * np.sin(theta)], axis=1)


def columns_needed(dim):
    return 2 if dim == 1 else dim
