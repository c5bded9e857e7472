"""Entropic Monge map estimator, forward and reverse, flow-composed or not.

The estimator bundles a cost view, the measures, and a Sinkhorn solution.
Transporting a point evaluates the smoothed dual potential's gradient as an
explicit softmax-weighted combination of cost gradients (stable, one pass,
and itself differentiable), feeds it to the inner conjugate solve, and maps
back through the target flow inverse when flows are present.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .conjugate import InnerSolveState, conjugate_solve
from .entropic import as_model_view, cost_matrix_points

__all__ = ["MapEstimator", "build_estimator", "entropic_potential", "transport", "transport_batch"]


class MapEstimator:
    """Frozen or training-time evaluator of T(x) and its reverse.

    direction="forward" maps source onto target using the g potential;
    "reverse" maps target onto source using the f potential and the cost
    reflected through the origin.
    """

    def __init__(self, view, source, target, solution, direction="forward", inner_state=None):
        if direction not in ("forward", "reverse"):
            raise ValueError(f"unknown direction {direction!r}")
        self.view = as_model_view(view)
        self.source = source
        self.target = target
        self.solution = solution
        self.direction = direction
        self.inner_state = inner_state if inner_state is not None else InnerSolveState()
        cost_view = self.view.cost
        if direction == "forward":
            self._anchors = self.view.push_target(ad.constant(target.points))
            self._pot = solution.g
            self._anchor_weights = target.weights
            self._conj_view = cost_view
            self._reflect_diffs = False
        else:
            self._anchors = self.view.push_source(ad.constant(source.points))
            self._pot = solution.f
            self._anchor_weights = source.weights
            refl = type(cost_view)(
                cost_view.layers, cost_view.alpha, cost_view.symmetric, not cost_view.reflected, cost_view.param_tensors
            )
            self._conj_view = refl
            self._reflect_diffs = True
        self._shift = ad.constant(solution.epsilon * np.log(self._anchor_weights))

    @property
    def epsilon(self):
        return self.solution.epsilon

    def _push_query(self, x):
        return self.view.push_source(x) if self.direction == "forward" else self.view.push_target(x)

    def _pull_result(self, z):
        return self.view.pull_target(z) if self.direction == "forward" else self.view.pull_source(z)

    def _pair_costs(self, xq):
        """h(query - anchor) for every pair, (B, m); query in flow coordinates."""
        b, m = xq.shape[0], self._anchors.shape[0]
        d = xq.shape[1]
        diffs = ad.reshape(xq, (b, 1, d)) - ad.reshape(self._anchors, (1, m, d))
        flat = ad.reshape(diffs, (b * m, d))
        return ad.reshape(self._conj_view.value(flat), (b, m)), flat

    def potential_values(self, xq):
        """Smoothed dual potential at flow-coordinate queries, (B, d) -> (B,)."""
        H, _ = self._pair_costs(xq)
        return ad.softmin_scaled(H, self._pot + self._shift, self.epsilon)

    def potential_gradients(self, xq):
        """Potential gradient via the softmax identity, (B, d) -> (B, d)."""
        b, m = xq.shape[0], self._anchors.shape[0]
        d = xq.shape[1]
        H, flat = self._pair_costs(xq)
        logits = (self._pot + self._shift - H) * (1.0 / self.epsilon)
        lse = ad.logsumexp(logits, axis=1)
        w = ad.exp(logits - ad.reshape(lse, (b, 1)))
        grads = ad.reshape(self._conj_view.grad(flat), (b, m, d))
        return ad.sum_(ad.reshape(w, (b, m, 1)) * grads, axis=1)

    def transport_tensor(self, x):
        """Map a (B, d) tensor of raw-coordinate points; stays on the tape."""
        xq = self._push_query(x)
        grad_pot = self.potential_gradients(xq)
        z = conjugate_solve(self._conj_view, grad_pot, self.inner_state, cache_key=self.direction)
        return self._pull_result(xq - z)


def _fingerprint_ok(view, source, target, solution):
    from .entropic import _fingerprint

    C = cost_matrix_points(ad.constant(source.points), ad.constant(target.points), view)
    return _fingerprint(C.values, source.weights, target.weights, solution.epsilon) == solution.fingerprint


def build_estimator(
    cost,
    source,
    target,
    solution,
    direction="forward",
    inner_state=None,
    check_fingerprint=True,
):
    """Assemble an estimator, verifying the potentials belong to these inputs.

    The fingerprint stored on the Sinkhorn solution covers the cost matrix
    values, the weights, and epsilon; passing a different cost or different
    measures than the ones solved for is rejected.
    """
    view = as_model_view(cost)
    if check_fingerprint and solution.fingerprint:
        const_view = view if not _is_recorded(view) else _constants_of(view)
        if not _fingerprint_ok(const_view, source, target, solution):
            raise ValueError("sinkhorn solution was not produced for this cost and these measures")
    return MapEstimator(view, source, target, solution, direction, inner_state)


def _is_recorded(view):
    return any(t.tape is not None for t in view.param_tensors)


def _constants_of(view):
    from .entropic import _FlowlessView

    cost_const = view.cost.constants()
    if view.source_flow is None and view.target_flow is None:
        return _FlowlessView(cost_const)
    import copy

    shim = copy.copy(view)
    shim.cost = cost_const
    shim.source_flow = view.source_flow.constants() if view.source_flow is not None else None
    if view.target_flow is view.source_flow:
        shim.target_flow = shim.source_flow
    else:
        shim.target_flow = view.target_flow.constants() if view.target_flow is not None else None
    return shim


def entropic_potential(est, x):
    """Scalar potential at one point (flow coordinates for composed costs)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float(est.potential_values(ad.constant(x[None, :])).values[0])


def transport(est, x):
    """Transport a single point; returns a plain array."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return est.transport_tensor(ad.constant(x[None, :])).values[0]


def transport_batch(est, points):
    """Vectorized transport of an (n, d) array; inner failures are collected
    across rows by the solver and raised together, not row by row."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return est.transport_tensor(ad.constant(points)).values
