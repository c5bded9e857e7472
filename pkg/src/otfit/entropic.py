"""Log-domain Sinkhorn with unrolled differentiation, couplings, divergences.

Potentials are kept in the measure-weighted convention: the coupling is
``P = (a b^T) * exp((f_i + g_j - C_ij) / eps)`` and at a fixed point
``f_i = -eps log sum_j b_j exp((g_j - C_ij)/eps)`` holds exactly, which is the
same softmin relation the out-of-sample entropic potential evaluates. The
classical iterate in terms of unweighted potentials differs from this one
only by the constant shifts ``eps log a`` / ``eps log b``.

Differentiation is by unrolling: the solve first runs detached to find the
stopping point, then the last ``unroll`` iterations are replayed as recorded
ops, reproducing the detached trajectory bit for bit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "SinkhornSolution",
    "Coupling",
    "SinkhornNumericalError",
    "cost_matrix",
    "cost_matrix_points",
    "sinkhorn",
    "coupling_from",
    "dual_objective",
    "sinkhorn_divergence",
    "sinkhorn_divergence_points",
]

DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITERS = 2000
DEFAULT_UNROLL = 200


class SinkhornNumericalError(FloatingPointError):
    pass


@dataclass
class SinkhornSolution:
    """Converged (or flagged) dual potentials plus solve diagnostics."""

    f: Tensor
    g: Tensor
    epsilon: float
    iterations: int
    marginal_error: float
    converged: bool
    fingerprint: bytes = b""

    @property
    def f_np(self):
        return self.f.values

    @property
    def g_np(self):
        return self.g.values


@dataclass
class Coupling:
    matrix: Tensor
    epsilon: float

    @property
    def matrix_np(self):
        return self.matrix.values


class _FlowlessView:
    """Adapter giving a bare convex-cost view the cost-model view surface."""

    def __init__(self, cost_view):
        self.cost = cost_view
        self.source_flow = None
        self.target_flow = None
        self.param_tensors = list(cost_view.param_tensors)

    def push_source(self, x):
        return x

    def push_target(self, y):
        return y

    def pull_target(self, y):
        return y

    def pull_source(self, x):
        return x


def as_model_view(cost):
    """Normalize ConvexCost / CostModel / either view to a model-level view."""
    if hasattr(cost, "tensorize"):
        cost = cost.tensorize(None)
    if hasattr(cost, "push_source"):
        return cost
    return _FlowlessView(cost)


def cost_matrix_points(x, y, view):
    """Pairwise cost tensor between row batches: C[i, j] = c(x_i, y_j).

    ``x`` and ``y`` may be recorded tensors (e.g. transported points), so the
    matrix is differentiable both in the cost parameters and in the points.
    """
    x = x if isinstance(x, Tensor) else ad.constant(np.atleast_2d(x))
    y = y if isinstance(y, Tensor) else ad.constant(np.atleast_2d(y))
    if x.shape[1] != y.shape[1]:
        raise ad.ShapeError("cost_matrix", x.shape, y.shape)
    view = as_model_view(view)
    n, m = x.shape[0], y.shape[0]
    xt = view.push_source(x)
    yt = view.push_target(y)
    diffs = ad.reshape(xt, (n, 1, xt.shape[1])) - ad.reshape(yt, (1, m, yt.shape[1]))
    vals = view.cost.value(ad.reshape(diffs, (n * m, xt.shape[1])))
    return ad.reshape(vals, (n, m))


def cost_matrix(src, tgt, cost):
    """Cost matrix between two measures; ``cost`` is a CostModel or a view."""
    return cost_matrix_points(src.points, tgt.points, as_model_view(cost))


def _fingerprint(C_values, a, b, epsilon):
    h = hashlib.sha256()
    h.update(C_values.tobytes())
    h.update(a.tobytes())
    h.update(b.tobytes())
    h.update(np.float64(epsilon).tobytes())
    return h.digest()


def _half_update(C, pot, shifted_logw, eps):
    """One softmin sweep: returns the fresh opposite potential."""
    return ad.softmin_scaled(C, pot + shifted_logw, eps)


def sinkhorn(
    src,
    tgt,
    C,
    epsilon,
    max_iters=DEFAULT_MAX_ITERS,
    tolerance=DEFAULT_TOLERANCE,
    init=None,
    unroll=DEFAULT_UNROLL,
):
    """Alternating log-domain updates until the marginal violation is small.

    ``C`` is the cost tensor (possibly recorded); ``init`` warmstarts the g
    potential (f is recomputed from it, so a converged pair restarts in one
    iteration). Each iteration ends on an f-refresh, making the row marginal
    exact and the softmin relation between f and g hold at the data points.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    a, b = src.weights, tgt.weights
    Cv = C.values
    if Cv.shape != (a.size, b.size):
        raise ad.ShapeError("sinkhorn", Cv.shape, (a.size, b.size))
    if not np.all(np.isfinite(Cv)):
        raise SinkhornNumericalError("sinkhorn: non-finite cost matrix entries")
    eps = float(epsilon)
    eps_log_a = eps * np.log(a)
    eps_log_b = eps * np.log(b)

    def f_sweep(Cm, g):
        return _softmin_np(Cm, g + eps_log_b, eps)

    def g_sweep(Cm, f):
        return _softmin_np(Cm.T, f + eps_log_a, eps)

    g = np.array(init[1] if isinstance(init, tuple) else init, dtype=np.float64) if init is not None else np.zeros(b.size)
    if g.shape != (b.size,):
        raise ValueError(f"init potential has shape {g.shape}, expected {(b.size,)}")
    g0 = g.copy()

    # detached pass: find the stopping iteration, remember a replay checkpoint
    history_cap = max(int(unroll), 1) if np.isfinite(unroll) else None
    checkpoints = [g.copy()]
    err = np.inf
    iterations = 0
    converged = False
    for it in range(1, int(max_iters) + 1):
        f = f_sweep(Cv, g)
        if np.isnan(f).any():
            raise SinkhornNumericalError(f"NaN in Sinkhorn f-update at iteration {it}")
        g_next = g_sweep(Cv, f)
        if np.isnan(g_next).any():
            raise SinkhornNumericalError(f"NaN in Sinkhorn g-update at iteration {it}")
        err = float(np.max(np.abs(b * np.expm1((g - g_next) / eps))))
        iterations = it
        if err <= tolerance:
            converged = True
            break
        g = g_next
        checkpoints.append(g.copy())
        if history_cap is not None and len(checkpoints) > history_cap:
            checkpoints.pop(0)

    # recorded replay of the tail of the trajectory
    start_g = checkpoints[0]
    replay_steps = len(checkpoints) - 1
    gt = ad.constant(start_g)
    CT = ad.transpose(C) if C.tape is not None else ad.constant(Cv.T)
    elb = ad.constant(eps_log_b)
    ela = ad.constant(eps_log_a)
    for _ in range(replay_steps):
        ft = _half_update(C, gt, elb, eps)
        gt = _half_update(CT, ft, ela, eps)
    ft = _half_update(C, gt, elb, eps)

    fp = _fingerprint(Cv, a, b, eps)
    return SinkhornSolution(ft, gt, eps, iterations, err, converged, fp)


def _softmin_np(Cm, shifted, eps):
    logits = (shifted[None, :] - Cm) / eps
    hi = logits.max(axis=1, keepdims=True)
    return -eps * (np.squeeze(hi, 1) + np.log(np.exp(logits - hi).sum(axis=1)))


def coupling_from(solution, C, src, tgt):
    """Primal coupling P[i,j] = a_i b_j exp((f_i + g_j - C_ij) / eps)."""
    n, m = C.shape
    f2 = ad.reshape(solution.f, (n, 1))
    g2 = ad.reshape(solution.g, (1, m))
    ab = ad.constant(src.weights[:, None] * tgt.weights[None, :])
    return Coupling(ab * ad.exp((f2 + g2 - C) * (1.0 / solution.epsilon)), solution.epsilon)


def dual_objective(solution, C, src, tgt):
    """Entropic dual value <a,f> + <b,g> - eps (mass - 1); primal at optimum."""
    coup = coupling_from(solution, C, src, tgt)
    mass = ad.sum_(coup.matrix)
    lin = ad.sum_(solution.f * ad.constant(src.weights)) + ad.sum_(solution.g * ad.constant(tgt.weights))
    return lin - (mass - 1.0) * solution.epsilon


def sinkhorn_divergence_points(
    x,
    a,
    y,
    b,
    view,
    epsilon,
    max_iters=DEFAULT_MAX_ITERS,
    tolerance=DEFAULT_TOLERANCE,
    unroll=DEFAULT_UNROLL,
    cache=None,
    diagnostics=None,
):
    """OT_eps(x, y) - (OT_eps(x, x) + OT_eps(y, y)) / 2 on raw point batches.

    ``x``/``y`` may be recorded tensors; gradients flow into both the points
    and the cost parameters. ``cache`` (a dict) warmstarts the three solves
    across repeated calls.
    """
    cache = cache if cache is not None else {}

    def term(key, xt, wa, yt, wb):
        Ct = cost_matrix_points(xt, yt, view)
        sol = sinkhorn(
            _bare(wa),
            _bare(wb),
            Ct,
            epsilon,
            max_iters,
            tolerance,
            init=cache.get(key),
            unroll=unroll,
        )
        cache[key] = sol.g_np.copy()
        if diagnostics is not None:
            diagnostics.append(sol)
        return dual_objective(sol, Ct, _bare(wa), _bare(wb))

    ot_ab = term("ab", x, a, y, b)
    ot_aa = term("aa", x, a, x, a)
    ot_bb = term("bb", y, b, y, b)
    return ot_ab - (ot_aa + ot_bb) * 0.5


class _bare:
    """Weight-only stand-in with the DiscreteMeasure attributes solvers read."""

    def __init__(self, w):
        self.weights = np.asarray(w, dtype=np.float64)
        self.n = self.weights.size

    @property
    def points(self):  # pragma: no cover - solvers never touch points
        raise AttributeError("bare measure has no points")


def sinkhorn_divergence(src, tgt, cost, epsilon, **kwargs):
    """Divergence between two measures under a cost model; scalar tensor."""
    if src.dim != tgt.dim:
        raise ad.ShapeError("sinkhorn_divergence", src.points.shape, tgt.points.shape)
    return sinkhorn_divergence_points(
        ad.constant(src.points),
        src.weights,
        ad.constant(tgt.points),
        tgt.weights,
        as_model_view(cost),
        epsilon,
        **kwargs,
    )
