"""The Lévy operator

    I[u](x) = int [u(x + beta(x,p,z)) - u(x) - 1_{|z|<=1} <p, beta(x,p,z)>] dq(z)

in two forms.  :func:`levy_split` works on grid data: the ball |z| < eps
enters only through the Hessian jet, ``1/2 <X beta, beta>`` integrated in
closed form, and the rest is summed over an :class:`AnnularQuadrature`.
:func:`levy_smooth` takes a smooth function handle and integrates the full
integrand with a second-order Taylor model on the inner ball.

For the solver the grid form is assembled once into a sparse matrix (see
:func:`assemble`), since for gradient-independent kernels it is linear in
the nodal values.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import NonFiniteSample, NonIntegrable, QuadratureMismatch
from .grid import Differentials, GridField, gradient_hessian
from .kernel import JumpKernel, frobenius_sq
from .measure import AnnularQuadrature, LevyMeasure, build_quadrature

SIGNS = {"sub": 1.0, "super": -1.0, "neutral": 0.0}


@dataclass(frozen=True)
class TruncationParams:
    epsilon: float
    delta: float = 0.0
    sign: str = "neutral"

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.sign not in SIGNS:
            raise ValueError(f"sign must be one of {sorted(SIGNS)}")

    @property
    def signed_delta(self):
        return SIGNS[self.sign] * self.delta


@dataclass(frozen=True)
class OperatorValue:
    value: float
    near_field: float
    far_field: float
    tail_remainder_bound: float
    l1_estimate: float
    taylor_remainder_bound: float = 0.0


def near_matrix(quad: AnnularQuadrature, A) -> np.ndarray:
    """C with  int_{|z|<eps} 1/2 <X A z, A z> dq = sum_de C_de X_de.

    Radial measures have the isotropic inner tensor (m2 / M) I.
    """
    return (quad.exact_second_moment_inner / (2.0 * quad.dim_m)) * (A @ np.swapaxes(A, -1, -2))


def slack_moment(quad: AnnularQuadrature, A) -> np.ndarray:
    """int_{|z|<eps} |A z|^2 dq, the coefficient of delta in the near field."""
    A = np.asarray(A, float)
    fro = frobenius_sq(A if A.ndim == 3 else A[None])
    out = quad.exact_second_moment_inner / quad.dim_m * fro
    return out if A.ndim == 3 else float(out[0])


def _pair_sum(values) -> float:
    """Sum over antipodal pairs first; odd terms cancel exactly."""
    v = np.asarray(values, float)
    half = v.shape[-1] // 2
    return float(np.sum(v[..., :half] + v[..., half:], axis=-1))


def _jumps(kernel, x, p, quad):
    """beta(x, p, z_j) for every node, shape (K, N)."""
    if kernel.variant == "custom":
        K = quad.nodes.shape[0]
        return kernel.evaluate_many(np.repeat(x[None], K, 0), np.repeat(p[None], K, 0), quad.nodes)
    A = kernel.linear_maps(x[None], p[None])[0]
    return quad.nodes @ A.T


def _check_quad(quad, trunc, kernel, measure):
    if trunc is not None and not math.isclose(quad.epsilon, trunc.epsilon, rel_tol=1e-14):
        raise QuadratureMismatch(f"quadrature epsilon {quad.epsilon} != truncation epsilon {trunc.epsilon}")
    if quad.dim_m != kernel.dim_m or measure.dim_m != kernel.dim_m:
        raise QuadratureMismatch("jump dimension differs between kernel, measure and quadrature")


def levy_split(field: GridField, index, diffs: Differentials, kernel: JumpKernel,
               measure: LevyMeasure, quad: AnnularQuadrature,
               trunc: TruncationParams) -> OperatorValue:
    """Split-form operator at a grid node with the jet ``diffs`` = (p, X).

    Near field: 1/2 <(X + 2 s delta I) beta, beta> over |z| < eps in closed
    form (s = +1 sub, -1 super, 0 neutral).  Far field: quadrature of the
    interpolated field over eps <= |z| < z_max.  Jumps beyond z_max are
    dropped; ``tail_remainder_bound`` bounds what they could contribute.
    """
    _check_quad(quad, trunc, kernel, measure)
    grid = field.grid
    flat = index if np.isscalar(index) else grid.flat(index)
    x = grid.points[flat]
    ux = field.values[flat]
    p = np.asarray(diffs.p, float)
    X = np.asarray(diffs.X, float)
    A = kernel.linear_maps(x[None], p[None])[0]
    near = float(np.sum(near_matrix(quad, A) * X)) + trunc.signed_delta * slack_moment(quad, A)

    beta = _jumps(kernel, x, p, quad)
    landing = x[None] + beta
    vals = _sample(field, landing)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteSample("non-finite field sample at a landing point")
    w = quad.weights
    comp = np.where(quad.inner, w * (beta @ p), 0.0)
    diff = w * (vals - ux)
    far = _pair_sum(diff) - _pair_sum(comp)
    l1 = float(np.sum(np.abs(diff - comp))) + abs(near)
    tail_bound = 2.0 * field.sup_norm() * quad.tail_mass_outer
    return OperatorValue(float(near + far), float(near), float(far), float(tail_bound), float(l1))


def _sample(field, pts):
    grid = field.grid
    idx, wts, outside = grid.stencil(pts)
    out = np.sum(wts * field.values[idx], axis=1)
    if np.any(outside):
        out[outside] = grid.g(pts[outside])
    return out


def _fd_gradient(u, x, step):
    N = x.size
    pts = np.concatenate([x[None] + step * np.eye(N), x[None] - step * np.eye(N)])
    vals = np.asarray(u(pts), float)
    return (vals[:N] - vals[N:]) / (2 * step)


def _fd_hessian(u, x, step):
    N = x.size
    H = np.empty((N, N))
    c = float(np.asarray(u(x[None]), float)[0])
    E = np.eye(N) * step
    for d in range(N):
        vp, vm = np.asarray(u(np.stack([x + E[d], x - E[d]])), float)
        H[d, d] = (vp - 2 * c + vm) / step ** 2
        for e in range(d + 1, N):
            pts = np.stack([x + E[d] + E[e], x + E[d] - E[e], x - E[d] + E[e], x - E[d] - E[e]])
            a, b, cc, dd = np.asarray(u(pts), float)
            H[d, e] = H[e, d] = (a - b - cc + dd) / (4 * step ** 2)
    return H


def jet(u, x, grad=None, hess=None):
    """(p, X) of a smooth handle: analytic when given, else central differences."""
    x = np.atleast_1d(np.asarray(x, float))
    scale = max(1.0, float(np.max(np.abs(x))))
    p = np.asarray(grad(x), float) if grad is not None else _fd_gradient(u, x, 1e-5 * scale)
    X = np.asarray(hess(x), float) if hess is not None else _fd_hessian(u, x, 1e-4 * scale)
    return np.atleast_1d(p), np.atleast_2d(X)


def _smooth_far(u, x, ux, p, kernel, quad):
    beta = _jumps(kernel, x, p, quad)
    vals = np.asarray(u(x[None] + beta), float)
    w = quad.weights
    comp = np.where(quad.inner, w * (beta @ p), 0.0)
    diff = w * (vals - ux)
    return beta, diff, comp


def levy_smooth(u, x, kernel: JumpKernel, measure: LevyMeasure, quad: AnnularQuadrature,
                p_override=None, grad=None, hess=None, check_integrable=True,
                delta=0.0) -> OperatorValue:
    """Full operator for a bounded C^2 handle ``u`` (vectorized on (n, N)).

    The inner ball uses the Taylor model 1/2 <X beta, beta> with X the
    Hessian of u at x (plus ``2 delta I`` when ``delta`` > 0).
    """
    _check_quad(quad, None, kernel, measure)
    x = np.atleast_1d(np.asarray(x, float))
    ux = float(np.asarray(u(x[None]), float)[0])
    p, X = jet(u, x, grad, hess)
    if p_override is not None:
        p = np.atleast_1d(np.asarray(p_override, float))
    A = kernel.linear_maps(x[None], p[None])[0]
    near = float(np.sum(near_matrix(quad, A) * X))
    if delta:
        near += delta * slack_moment(quad, A)
    beta, diff, comp = _smooth_far(u, x, ux, p, kernel, quad)
    h = diff - comp
    if not np.all(np.isfinite(h)):
        raise NonIntegrable("integrand is not finite at some quadrature node")
    far = _pair_sum(diff) - _pair_sum(comp)
    l1 = float(np.sum(np.abs(h))) + abs(near)

    if check_integrable and quad.nodes.shape[0]:
        finer = build_quadrature(measure, quad.epsilon, quad.z_max, 2 * quad.nodes_per_shell,
                                 _growth(quad), quad.angles, _width(quad))
        _, d2, c2 = _smooth_far(u, x, ux, p, kernel, finer)
        l1_fine = float(np.sum(np.abs(d2 - c2))) + abs(near)
        if not math.isfinite(l1_fine) or abs(l1_fine - l1) > 0.25 * max(l1_fine, 1e-300):
            raise NonIntegrable(f"L1 estimate did not stabilize ({l1:.6g} vs {l1_fine:.6g})")
        _check_outer_decay(quad, h)

    # fourth-order Taylor remainder, calibrated on the innermost shell
    taylor = 0.0
    if quad.shells:
        first = quad.shell_of_node() == 0
        bz = beta[first]
        model = 0.5 * np.einsum("kn,nm,km->k", bz, X, bz)
        r4 = np.sum(quad.weights[first] * np.linalg.norm(quad.nodes[first], axis=1) ** 4)
        if r4 > 0:
            rho = abs(float(np.sum(diff[first] - comp[first] - quad.weights[first] * model))) / r4
            taylor = rho * measure.radial_moment(0.0, quad.epsilon, 4.0)
    tail_bound = 2.0 * _sup_estimate(u, x, beta, ux) * quad.tail_mass_outer
    return OperatorValue(float(near + far), float(near), float(far), float(tail_bound), float(l1),
                         float(taylor))


def _check_outer_decay(quad, h, count=4):
    """Shell contributions of |h| beyond |z| = 1 must decay on geometric shells."""
    sid = quad.shell_of_node()
    contrib = []
    for k, (a, b) in enumerate(quad.shells):
        if a >= 1.0 and b / a >= 1.5:
            contrib.append(float(np.sum(np.abs(h[sid == k]))))
    # the last shell may be cut short by z_max
    tail = contrib[-count - 1:-1]
    if len(tail) == count and tail[0] > 0 and all(t1 >= 0.999 * t0 for t0, t1 in zip(tail, tail[1:])):
        raise NonIntegrable("integrand mass does not decay at large |z|")


def _sup_estimate(u, x, beta, ux):
    vals = np.asarray(u(x[None] + beta), float)
    return float(max(abs(ux), np.max(np.abs(vals)) if vals.size else 0.0))


def _growth(quad):
    if len(quad.shells) >= 2:
        a, b = quad.shells[0]
        return b / a
    return 2.0


def _width(quad):
    widths = [b - a for a, b in quad.shells]
    ratios = [b / a for a, b in quad.shells]
    if widths and max(ratios) - min(ratios) > 1e-9 and len(widths) > 2:
        return max(widths[:-1])
    return math.inf


# refinement study --------------------------------------------------------------


@dataclass(frozen=True)
class RefinementTable:
    rows: list
    orders: list
    limit: float

    def to_csv(self) -> str:
        out = ["epsilon,value,near,far,delta_prev"]
        for r in self.rows:
            dp = "" if r["delta_prev"] is None else f"{r['delta_prev']:.17g}"
            out.append(f"{r['epsilon']:.17g},{r['value']:.17g},{r['near']:.17g},{r['far']:.17g},{dp}")
        return "\n".join(out) + "\n"


def epsilon_refinement_study(target, x, kernel, measure, eps_sequence, delta=0.0,
                             z_max=100.0, nodes_per_shell=8, growth_ratio=2.0,
                             max_shell_width=math.inf, grad=None, hess=None) -> RefinementTable:
    """Operator values as the inner radius eps shrinks.

    ``target`` is a smooth handle or a :class:`GridField` (then ``x`` is a
    node index).  With ``delta`` > 0 the inner ball carries the subsolution
    slack ``delta |beta|^2``, so values converge at rate eps^(2 - alpha0).
    ``limit`` is the Richardson extrapolation of the last two values with the
    observed order (or the last value when no order is available).
    """
    rows = []
    for eps in eps_sequence:
        quad = build_quadrature(measure, eps, z_max, nodes_per_shell, growth_ratio,
                                max_shell_width=max_shell_width)
        if isinstance(target, GridField):
            d = gradient_hessian(target, x)
            sign = "sub" if delta > 0 else "neutral"
            val = levy_split(target, x, d, kernel, measure, quad, TruncationParams(eps, delta, sign))
        else:
            val = levy_smooth(target, x, kernel, measure, quad, grad=grad, hess=hess,
                              check_integrable=False, delta=delta)
        prev = rows[-1]["value"] if rows else None
        rows.append({"epsilon": float(eps), "value": val.value, "near": val.near_field,
                     "far": val.far_field, "delta_prev": None if prev is None else val.value - prev})
    orders = []
    for k in range(2, len(rows)):
        d0, d1 = abs(rows[k - 1]["delta_prev"]), abs(rows[k]["delta_prev"])
        ratio = rows[k - 2]["epsilon"] / rows[k - 1]["epsilon"]
        if d0 > 0 and d1 > 0:
            orders.append(math.log(d0 / d1) / math.log(ratio))
    limit = rows[-1]["value"]
    if orders and len(rows) >= 2:
        q = orders[-1]
        ratio = rows[-2]["epsilon"] / rows[-1]["epsilon"]
        f = ratio ** q
        if q > 0 and f != 1.0:
            limit = rows[-1]["value"] + rows[-1]["delta_prev"] / (f - 1.0)
    return RefinementTable(rows, orders, limit)


# sparse assembly for the solver -------------------------------------------------


def difference_operators(grid, rows):
    """Sparse central-difference gradient and Hessian rows at ``rows``.

    Returns (grad, hess) with grad[d] and hess[d][e] of shape (len(rows), size).
    """
    N = grid.dim
    h = grid.h
    n = len(rows)
    r = np.arange(n)
    st = grid.strides
    grad, hess = [], [[None] * N for _ in range(N)]
    for d in range(N):
        cols = np.concatenate([rows + st[d], rows - st[d]])
        vals = np.concatenate([np.full(n, 0.5 / h), np.full(n, -0.5 / h)])
        grad.append(sparse.csr_matrix((vals, (np.concatenate([r, r]), cols)), shape=(n, grid.size)))
        cols = np.concatenate([rows + st[d], rows, rows - st[d]])
        vals = np.concatenate([np.full(n, 1 / h ** 2), np.full(n, -2 / h ** 2), np.full(n, 1 / h ** 2)])
        hess[d][d] = sparse.csr_matrix((vals, (np.concatenate([r, r, r]), cols)), shape=(n, grid.size))
    if N == 2:
        c = 0.25 / h ** 2
        cols = np.concatenate([rows + st[0] + st[1], rows + st[0] - st[1],
                               rows - st[0] + st[1], rows - st[0] - st[1]])
        vals = np.concatenate([np.full(n, c), np.full(n, -c), np.full(n, -c), np.full(n, c)])
        m = sparse.csr_matrix((vals, (np.tile(r, 4), cols)), shape=(n, grid.size))
        hess[0][1] = hess[1][0] = m
    return grad, hess


@dataclass
class LevyStencil:
    """I[u] at the rows as ``matrix @ u + offset`` (frozen gradient)."""

    rows: np.ndarray
    matrix: sparse.csr_matrix
    offset: np.ndarray
    slack: np.ndarray          # coefficient of delta (inner moment contraction)
    center_bound: np.ndarray   # upper bound on -d I_i / d u_i

    def apply(self, values, signed_delta=0.0):
        out = self.matrix @ values + self.offset
        if signed_delta:
            out = out + signed_delta * self.slack
        return out


def assemble(grid, kernel: JumpKernel, quad: AnnularQuadrature, rows, ps=None,
             threads=1, chunk=64) -> LevyStencil:
    """Build the sparse grid operator at node indices ``rows``.

    ``ps`` (len(rows), N) is the frozen gradient for gradient-dependent
    kernels.  Chunks are processed in a fixed order, so the result does not
    depend on ``threads``.
    """
    rows = np.asarray(rows, dtype=np.int64)
    n = len(rows)
    N = grid.dim
    xs = grid.points[rows]
    ps = np.zeros((n, N)) if ps is None else np.asarray(ps, float).reshape(n, N)
    A = kernel.linear_maps(xs, ps)
    slack = slack_moment(quad, A)
    grad, hess = difference_operators(grid, rows)

    w = quad.weights
    inner = quad.inner
    total_far = float(np.sum(w))

    def build(lo):
        hi = min(lo + chunk, n)
        sl = slice(lo, hi)
        if kernel.variant == "custom":
            beta = np.stack([_jumps(kernel, xs[i], ps[i], quad) for i in range(lo, hi)])
        else:
            beta = np.einsum("inm,km->ikn", A[sl], quad.nodes)
        land = xs[sl, None, :] + beta
        m = hi - lo
        K = land.shape[1]
        idx, wts, outside = grid.stencil(land.reshape(-1, N))
        node_w = np.tile(w, m)
        vals = (wts * node_w[:, None]).ravel()
        rr = np.repeat(np.arange(lo, hi), K * wts.shape[1])
        block = sparse.csr_matrix((vals, (rr - lo, idx.ravel())), shape=(m, grid.size))
        block.sum_duplicates()
        out_w = np.where(outside, node_w, 0.0)
        off = np.zeros(m)
        if np.any(outside):
            gv = np.zeros(m * K)
            gv[outside] = grid.g(land.reshape(-1, N)[outside])
            off = (out_w * gv).reshape(m, K)
            off = off[:, : K // 2] + off[:, K // 2:]
            off = off.sum(axis=1)
        comp = np.where(inner[None, :, None], w[None, :, None] * beta, 0.0)
        comp = (comp[:, : K // 2] + comp[:, K // 2:]).sum(axis=1)
        return block, off, comp

    starts = list(range(0, n, chunk))
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(build, starts))
    else:
        parts = [build(s) for s in starts]
    far = sparse.vstack([p[0] for p in parts], format="csr") if parts else sparse.csr_matrix((0, grid.size))
    offset = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0)
    comp = np.concatenate([p[2] for p in parts]) if parts else np.zeros((0, N))

    diag = sparse.csr_matrix((np.full(n, -total_far), (np.arange(n), rows)), shape=(n, grid.size))
    near, near_off, near_center = near_stencil(grid, rows, A, quad)
    mat = far + diag + near
    for d in range(N):
        if np.any(comp[:, d] != 0.0):
            mat = mat - sparse.diags(comp[:, d]) @ grad[d]
    mat = sparse.csr_matrix(mat)
    mat.sum_duplicates()
    center = total_far + near_center
    return LevyStencil(rows, mat, offset + near_off, slack, center)


def near_stencil(grid, rows, A, quad):
    """Monotone discretization of (m2 / 2M) sum_k a_k^T X a_k at ``rows``.

    Each column a_k of A gets a second difference along a_k with step
    t = h / max|a_k|, reading the field by multilinear interpolation, so
    every off-center weight is nonnegative.  Columns along a coordinate
    axis land on nodes and reproduce the usual three-point difference.
    Returns (matrix, offset from landings outside the box, center bound).
    """
    n, N, M = A.shape
    coef0 = quad.exact_second_moment_inner / (2.0 * quad.dim_m)
    r_idx, c_idx, vals = [], [], []
    offset = np.zeros(n)
    center = np.zeros(n)
    xs = grid.points[rows]
    local = np.arange(n)
    for k in range(M):
        a = A[:, :, k]
        amax = np.max(np.abs(a), axis=1)
        live = amax > 0
        if not np.any(live):
            continue
        t = np.where(live, grid.h / np.where(live, amax, 1.0), 0.0)
        c = np.where(live, coef0 / np.where(live, t, 1.0) ** 2, 0.0)
        center += 2.0 * c
        r_idx.append(local)
        c_idx.append(rows)
        vals.append(-2.0 * c)
        for sgn in (1.0, -1.0):
            pts = xs + sgn * t[:, None] * a
            idx, wts, outside = grid.stencil(pts)
            r_idx.append(np.repeat(local, wts.shape[1]))
            c_idx.append(idx.ravel())
            vals.append((wts * c[:, None]).ravel())
            if np.any(outside):
                offset[outside] += c[outside] * grid.g(pts[outside])
    if not vals:
        return sparse.csr_matrix((n, grid.size)), offset, center
    mat = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(r_idx), np.concatenate(c_idx))),
                            shape=(n, grid.size))
    mat.sum_duplicates()
    return mat, offset, center
