"""Evaluation of (grad h)^-1 by solving the inner strongly convex problem.

``(grad h)^{-1}(x)`` is the minimizer of ``h(z) - <z, x>``; strong convexity
(alpha > 0) makes the minimizer unique and the problem easy for a quasi-Newton
method. Solves are batched across query rows and warmstarted from the
previous training iterate. Differentiation does not unroll the solver: the
optimality condition ``grad h(z*) = x`` is differentiated implicitly, which
needs one small SPD Hessian solve per row plus a single recorded sweep for
the parameter direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .costs import ConvexCostView

__all__ = [
    "InnerSolveError",
    "HessianSolveError",
    "InnerSolveState",
    "solve_batch",
    "grad_h_inverse",
    "grad_h_inverse_vjp",
    "conjugate_solve",
]

LBFGS_MEMORY = 8
ARMIJO_C1 = 1e-4
DEFAULT_GTOL = 1e-8
DEFAULT_MAX_ITERS = 200


class InnerSolveError(RuntimeError):
    def __init__(self, residuals, rows):
        self.residuals = residuals
        self.rows = list(rows)
        worst = float(np.max(residuals[self.rows])) if self.rows else float("nan")
        super().__init__(
            f"inner solve failed to converge on rows {self.rows} (worst residual {worst:.3e})"
        )


class HessianSolveError(RuntimeError):
    pass


@dataclass
class InnerSolveState:
    """Warmstart cache and solver knobs, confined to one training loop."""

    max_iters: int = DEFAULT_MAX_ITERS
    gtol: float = DEFAULT_GTOL
    cache: dict = field(default_factory=dict)
    iteration_log: list = field(default_factory=list)

    def warmstart_for(self, key, shape):
        z = self.cache.get(key)
        if z is not None and z.shape == shape and np.all(np.isfinite(z)):
            return z
        return None

    def store(self, key, z, iters):
        self.cache[key] = z.copy()
        self.iteration_log.append(np.asarray(iters))


def solve_batch(view, x, warmstart=None, max_iters=DEFAULT_MAX_ITERS, gtol=DEFAULT_GTOL):
    """Minimize h(z) - <z, x> row by row with batched L-BFGS + Armijo.

    ``view`` must be a constants ConvexCostView. Returns (z, iterations,
    converged, residuals) with per-row iteration counts; rows start from the
    warmstart when given, else from x / alpha (exact for the pure quadratic).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    batch, dim = x.shape
    z = warmstart.copy() if warmstart is not None else x / view.alpha

    def value(zz):
        return view.value(ad.constant(zz)).values - np.einsum("bd,bd->b", zz, x)

    def grad(zz):
        return view.grad(ad.constant(zz)).values - x

    g = grad(z)
    fval = value(z)
    res = np.max(np.abs(g), axis=1)
    active = res > gtol
    iters = np.zeros(batch, dtype=np.int64)
    stalls = np.zeros(batch, dtype=np.int64)
    s_hist, y_hist, rho_hist = [], [], []

    for _ in range(int(max_iters)):
        if not active.any():
            break
        # two-loop recursion, vectorized over rows (inverse-Hessian seed 1/alpha)
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a_k = rho * np.einsum("bd,bd->b", s, q)
            q -= a_k[:, None] * y
            alphas.append(a_k)
        if y_hist:
            sy = np.einsum("bd,bd->b", s_hist[-1], y_hist[-1])
            yy = np.einsum("bd,bd->b", y_hist[-1], y_hist[-1])
            gamma = np.where((sy > 0) & (yy > 0), sy / np.maximum(yy, 1e-300), 1.0 / view.alpha)
        else:
            gamma = np.full(batch, 1.0 / view.alpha)
        r = gamma[:, None] * q
        for s, y, rho, a_k in zip(s_hist, y_hist, rho_hist, reversed(alphas)):
            b_k = rho * np.einsum("bd,bd->b", y, r)
            r += (a_k - b_k)[:, None] * s
        direction = -r
        slope = np.einsum("bd,bd->b", g, direction)
        uphill = slope >= 0  # numerical safeguard; fall back to steepest descent
        if uphill.any():
            direction[uphill] = -g[uphill]
            slope[uphill] = -np.einsum("bd,bd->b", g[uphill], g[uphill])

        step = np.where(active, 1.0, 0.0)
        z_new = z + step[:, None] * direction
        f_new = value(z_new)
        # Armijo decrease with an absolute slack: near the minimizer the
        # predicted decrease falls below float resolution of f itself.
        slack = 1e-14 * (1.0 + np.abs(fval))
        for _bt in range(60):
            need = active & (f_new > fval + ARMIJO_C1 * step * slope + slack)
            if not need.any():
                break
            step[need] *= 0.5
            z_new = z + step[:, None] * direction
            f_new = value(z_new)

        g_new = grad(z_new)
        # reject steps that crept uphill in the residual once f is flat;
        # rows rejecting twice in a row have hit the float floor and stop
        res_new = np.max(np.abs(g_new), axis=1)
        worse = active & (f_new > fval + slack) & (res_new > res)
        if worse.any():
            z_new = np.where(worse[:, None], z, z_new)
            f_new = np.where(worse, fval, f_new)
            g_new = np.where(worse[:, None], g, g_new)
        stalls = np.where(worse, stalls + 1, 0)
        s_vec = z_new - z
        y_vec = g_new - g
        sy = np.einsum("bd,bd->b", s_vec, y_vec)
        good = sy > 1e-14
        rho = np.where(good, 1.0 / np.where(good, sy, 1.0), 0.0)
        s_hist.append(np.where(active[:, None], s_vec, 0.0))
        y_hist.append(np.where(active[:, None], y_vec, 0.0))
        rho_hist.append(np.where(active, rho, 0.0))
        if len(s_hist) > LBFGS_MEMORY:
            s_hist.pop(0)
            y_hist.pop(0)
            rho_hist.pop(0)

        z = np.where(active[:, None], z_new, z)
        fval = np.where(active, f_new, fval)
        g = np.where(active[:, None], g_new, g)
        iters += active
        res = np.max(np.abs(g), axis=1)
        active = (res > gtol) & (stalls < 2)

    return z, iters, res <= gtol, res


def grad_h_inverse(cost, x, warmstart=None, max_iters=DEFAULT_MAX_ITERS, gtol=DEFAULT_GTOL):
    """(grad h)^{-1} at a single point; raises on non-convergence."""
    view = cost.tensorize(None) if hasattr(cost, "tensorize") else cost
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    ws = None if warmstart is None else np.atleast_2d(np.asarray(warmstart, dtype=np.float64))
    z, _, ok, res = solve_batch(view, x[None, :], ws, max_iters, gtol)
    if not ok.all():
        raise InnerSolveError(res, np.flatnonzero(~ok))
    return z[0]


def _batched_hessians(view, z):
    """Central-difference Hessian-vector products along each basis vector."""
    batch, dim = z.shape
    delta = 1e-5 * (1.0 + np.linalg.norm(z, axis=1))
    probes = np.repeat(z[:, None, :], 2 * dim, axis=1)
    for k in range(dim):
        probes[:, 2 * k, k] += delta
        probes[:, 2 * k + 1, k] -= delta
    grads = view.grad(ad.constant(probes.reshape(batch * 2 * dim, dim))).values
    grads = grads.reshape(batch, 2 * dim, dim)
    H = np.empty((batch, dim, dim))
    for k in range(dim):
        H[:, :, k] = (grads[:, 2 * k] - grads[:, 2 * k + 1]) / (2.0 * delta[:, None])
    return 0.5 * (H + np.swapaxes(H, 1, 2))


def _solve_spd(H, rhs):
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise HessianSolveError(
            "inner Hessian is not positive definite; with alpha > 0 this indicates a bug"
        ) from exc
    return np.linalg.solve(H, rhs[..., None])[..., 0]


def _param_pullback(view, z, w):
    """Gradients in the cost parameters of sum_i <grad h(z_i), -w_i>."""
    tape = ad.Tape()
    layers = [{k: tape.leaf(t.values) for k, t in layer.items()} for layer in view.layers]
    tensors = [t for layer in layers for t in layer.values()]
    sub = ConvexCostView(layers, view.alpha, view.symmetric, view.reflected, tensors)
    s = ad.sum_(sub.grad(ad.constant(z)) * ad.constant(-w))
    grads = ad.backward(s)
    return [grads.get(t).values for t in tensors]


def grad_h_inverse_vjp(cost, x, zstar, upstream, residual_tol=1e-6):
    """Implicit-function-theorem pullback through the inner argmin.

    With F(z, theta) = grad h(z; theta) - x = 0 at z*, the sensitivity in x is
    the inverse Hessian and in theta is -(inverse Hessian) d_theta grad h; both
    are delivered against ``upstream`` via one SPD solve and one recorded sweep.
    """
    view = cost.tensorize(None) if hasattr(cost, "tensorize") else cost
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    zstar = np.atleast_2d(np.asarray(zstar, dtype=np.float64))
    upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    res = np.max(np.abs(view.grad(ad.constant(zstar)).values - x))
    if res > residual_tol:
        raise ValueError(f"z* violates first-order optimality: residual {res:.3e} > {residual_tol}")
    H = _batched_hessians(view, zstar)
    w = _solve_spd(H, upstream)
    pgrads = _param_pullback(view, zstar, w)
    if x.shape[0] == 1:
        return w[0], pgrads
    return w, pgrads


def conjugate_solve(cost_view, x, state=None, cache_key="fwd"):
    """Batched (grad h)^{-1} as a recorded op with the implicit backward rule.

    ``x`` is a (B, d) tensor; returns a (B, d) tensor. The forward solve runs
    detached; the backward rule performs the Hessian solves and pushes the
    parameter direction through a one-off recorded sweep.
    """
    state = state if state is not None else InnerSolveState()
    const_view = cost_view.constants()
    ws = state.warmstart_for(cache_key, x.shape)
    z, iters, ok, res = solve_batch(const_view, x.values, ws, state.max_iters, state.gtol)
    if not ok.all():
        raise InnerSolveError(res, np.flatnonzero(~ok))
    state.store(cache_key, z, iters)

    def vjp(upstream):
        H = _batched_hessians(const_view, z)
        w = _solve_spd(H, upstream)
        return [w] + _param_pullback(const_view, z, w)

    parents = [x] + list(cost_view.param_tensors)
    return ad.custom(z, parents, vjp)
