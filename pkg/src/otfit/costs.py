"""Parameterized ground costs.

The translation-invariant part is an input-convex network ``h`` made strongly
convex by an added quadratic; optional invertible flows transform source and
target points before the difference is taken, giving the composed cost
``c(x, y) = h(flow_src(x) - flow_tgt(y))``.

Every parameter container supports ``tensorize(tape)``: with a tape it
returns a view whose parameters are tape leaves (trainable); with ``None``
the view is made of constants and evaluation is plain numpy arithmetic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "IcnnParams",
    "ConvexCost",
    "CouplingFlow",
    "CostModel",
    "icnn_forward",
    "cost_h",
    "flow_forward",
    "flow_inverse",
    "evaluate",
    "squared_euclidean_cost",
    "save_cost_model",
    "load_cost_model",
]


# ---------------------------------------------------------------------------
# input-convex network


@dataclass
class IcnnParams:
    """Feedforward net convex in its input.

    Hidden layers apply softplus; the output layer (width 1) is affine.
    Propagation weights ``wz`` are entrywise non-negative and absent for the
    first layer, which is what makes the composition convex.
    """

    input_dim: int
    hidden_sizes: list
    layers: list = field(default_factory=list)  # dicts with wx, b and (later) wz

    @classmethod
    def init(cls, input_dim, hidden_sizes, rng, scale=1.0):
        """Uniform init scaled by 1/sqrt(fan-in); wz drawn non-negative."""
        sizes = list(hidden_sizes) + [1]
        layers = []
        fan_prev = None
        for i, width in enumerate(sizes):
            s_in = scale / np.sqrt(input_dim)
            layer = {
                "wx": rng.uniform(-s_in, s_in, size=(input_dim, width)),
                "b": rng.uniform(-s_in, s_in, size=width),
            }
            if i > 0:
                s_z = scale / np.sqrt(fan_prev)
                layer["wz"] = np.abs(rng.uniform(-s_z, s_z, size=(fan_prev, width)))
            fan_prev = width
            layers.append(layer)
        return cls(input_dim, list(hidden_sizes), layers)

    @classmethod
    def zero(cls, input_dim, hidden_sizes=(1,)):
        """All-zero network; evaluates to exactly 0 everywhere."""
        sizes = list(hidden_sizes) + [1]
        layers = []
        fan_prev = None
        for i, width in enumerate(sizes):
            layer = {"wx": np.zeros((input_dim, width)), "b": np.zeros(width)}
            if i > 0:
                layer["wz"] = np.zeros((fan_prev, width))
            fan_prev = width
            layers.append(layer)
        return cls(input_dim, list(hidden_sizes), layers)

    def param_items(self):
        # order must match tensorize(): dict insertion order per layer
        for i, layer in enumerate(self.layers):
            for name, arr in layer.items():
                yield f"icnn.layer{i}.{name}", arr

    def project_nonnegative(self):
        """Clip propagation weights at zero (run after every optimizer step)."""
        for layer in self.layers[1:]:
            np.maximum(layer["wz"], 0.0, out=layer["wz"])

    def min_wz(self):
        return min(float(layer["wz"].min()) for layer in self.layers[1:])

    def tensorize(self, tape):
        make = tape.leaf if tape is not None else ad.constant
        return [{name: make(arr) for name, arr in layer.items()} for layer in self.layers]


def _icnn_apply(layers, z):
    """Batched forward of the layer recursion; z is a (B, d) tensor -> (B,)."""
    first = layers[0]
    h = ad.softplus(z @ first["wx"] + first["b"])
    for layer in layers[1:-1]:
        h = ad.softplus(h @ layer["wz"] + z @ layer["wx"] + layer["b"])
    last = layers[-1]
    out = h @ last["wz"] + z @ last["wx"] + last["b"]
    return ad.reshape(out, (out.shape[0],))


def _icnn_input_grad(layers, z):
    """Gradient of the network output in its input, (B, d) -> (B, d).

    Forward-accumulates the tangent of each layer, so the result is itself a
    recorded computation and can be differentiated in the parameters.
    """
    batch, d = z.shape
    first = layers[0]
    u = z @ first["wx"] + first["b"]
    h = ad.softplus(u)
    # g: (B, d, width) tangent of the current activations in z
    su = ad.reshape(ad.sigmoid(u), (batch, 1, u.shape[1]))
    g = su * ad.reshape(first["wx"], (1, d, u.shape[1]))
    for layer in layers[1:-1]:
        u = h @ layer["wz"] + z @ layer["wx"] + layer["b"]
        gu = g @ layer["wz"] + ad.reshape(layer["wx"], (1, d, u.shape[1]))
        g = ad.reshape(ad.sigmoid(u), (batch, 1, u.shape[1])) * gu
        h = ad.softplus(u)
    last = layers[-1]
    gout = g @ last["wz"] + ad.reshape(last["wx"], (1, d, 1))
    return ad.reshape(gout, (batch, d))


# ---------------------------------------------------------------------------
# strongly convex cost h


@dataclass
class ConvexCost:
    """ICNN plus 0.5*alpha*|z|^2, optionally symmetrized as h(z)+h(-z)."""

    icnn: IcnnParams
    alpha: float = 0.01
    symmetric: bool = False

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def dim(self):
        return self.icnn.input_dim

    def param_items(self):
        return self.icnn.param_items()

    def tensorize(self, tape, reflected=False):
        layers = self.icnn.tensorize(tape)
        tensors = [t for layer in layers for t in layer.values()]
        return ConvexCostView(layers, float(self.alpha), self.symmetric, reflected, tensors)

    def reflect(self):
        """Cost z -> h(-z), used by the reverse map estimator."""
        return _ReflectedCost(self)


@dataclass
class _ReflectedCost:
    base: ConvexCost

    @property
    def alpha(self):
        return self.base.alpha

    @property
    def dim(self):
        return self.base.dim

    @property
    def symmetric(self):
        return self.base.symmetric

    def param_items(self):
        return self.base.param_items()

    def tensorize(self, tape, reflected=False):
        return self.base.tensorize(tape, reflected=not reflected)

    def reflect(self):
        return self.base


@dataclass
class ConvexCostView:
    layers: list
    alpha: float
    symmetric: bool
    reflected: bool
    param_tensors: list

    def constants(self):
        """Same parameter values as constants (nothing recorded)."""
        layers = [{k: ad.constant(t.values) for k, t in layer.items()} for layer in self.layers]
        tensors = [t for layer in layers for t in layer.values()]
        return ConvexCostView(layers, self.alpha, self.symmetric, self.reflected, tensors)

    def value(self, z):
        """h at a batch of points, (B, d) tensor -> (B,)."""
        zin = -z if self.reflected and not self.symmetric else z
        out = _icnn_apply(self.layers, zin)
        if self.symmetric:
            out = out + _icnn_apply(self.layers, -zin)
        quad = ad.sum_(ad.square(z), axis=1) * (0.5 * self.alpha)
        return out + quad

    def grad(self, z):
        """Gradient of h in z, (B, d) tensor -> (B, d)."""
        zin = -z if self.reflected and not self.symmetric else z
        g = _icnn_input_grad(self.layers, zin)
        if self.symmetric:
            g = g - _icnn_input_grad(self.layers, -zin)
        elif self.reflected:
            g = -g
        return g + z * self.alpha

    def value_np(self, z):
        return self.value(ad.constant(np.atleast_2d(z))).values

    def grad_np(self, z):
        return self.grad(ad.constant(np.atleast_2d(z))).values


def squared_euclidean_cost(dim):
    """h(z) = 0.5*|z|^2 exactly (zero network, alpha = 1)."""
    return ConvexCost(IcnnParams.zero(dim), alpha=1.0, symmetric=False)


# ---------------------------------------------------------------------------
# invertible flows


@dataclass
class CouplingFlow:
    """Stack of affine coupling layers (d >= 2) or a monotone map (d = 1).

    Coupling layers split coordinates by a binary mask; the passthrough half
    drives small tanh networks producing log-scales (clamped smoothly to
    [-clamp, clamp], keeping the map bijective) and shifts for the other
    half. For d = 1 the map is t + e^s * x + sum_k g_k^2 a_k softplus(a_k x + b_k),
    increasing in x for any parameter values.
    """

    dim: int
    layers: list
    clamp: float = 3.0

    @classmethod
    def init(cls, dim, num_layers=4, hidden=16, scale=0.0, rng=None, clamp=3.0):
        """scale=0 zero-initializes the output layers: the flow starts as identity."""
        rng = rng if rng is not None else np.random.default_rng(0)
        if dim == 1:
            k = max(hidden // 4, 2)
            layer = {
                "log_scale": np.zeros(1),
                "shift": np.zeros(1),
                "gate": rng.normal(0.0, scale, size=k) if scale else np.zeros(k),
                "slope": rng.normal(0.0, 0.5, size=k) + 1.0,
                "offset": rng.normal(0.0, 0.5, size=k),
            }
            return cls(1, [layer], clamp)
        layers = []
        for l in range(num_layers):
            mask = (np.arange(dim) + l) % 2 == 0
            if mask.all() or not mask.any():
                mask = np.arange(dim) < dim // 2
            na, nb = int(mask.sum()), int((~mask).sum())
            layer = {"mask": mask}
            for net, rows in (("s", na), ("t", na)):
                layer[f"{net}_w1"] = rng.normal(0.0, 1.0 / np.sqrt(rows), size=(rows, hidden))
                layer[f"{net}_b1"] = np.zeros(hidden)
                layer[f"{net}_w2"] = (
                    rng.normal(0.0, scale, size=(hidden, nb)) if scale else np.zeros((hidden, nb))
                )
                layer[f"{net}_b2"] = np.zeros(nb)
            layers.append(layer)
        return cls(dim, layers, clamp)

    @classmethod
    def random(cls, dim, rng, num_layers=4, hidden=16, weight_std=0.5, clamp=1.5):
        """Random diffeomorphism (all weights drawn), for synthetic data."""
        flow = cls.init(dim, num_layers, hidden, scale=0.0, rng=rng, clamp=clamp)
        for layer in flow.layers:
            for name, arr in layer.items():
                if name == "mask":
                    continue
                layer[name] = rng.normal(0.0, weight_std, size=arr.shape)
        return flow

    def param_items(self):
        for i, layer in enumerate(self.layers):
            for name, arr in layer.items():
                if name == "mask":
                    continue
                yield f"flow.layer{i}.{name}", arr

    def tensorize(self, tape):
        make = tape.leaf if tape is not None else ad.constant
        layers = []
        tensors = []
        for layer in self.layers:
            tl = {}
            for name, arr in layer.items():
                if name == "mask":
                    tl[name] = arr
                    continue
                tl[name] = make(arr)
                tensors.append(tl[name])
            layers.append(tl)
        return FlowView(self.dim, layers, float(self.clamp), tensors)


def _soft_clamp(x, bound):
    return ad.tanh(x * (1.0 / bound)) * bound


class FlowView:
    def __init__(self, dim, layers, clamp, tensors):
        self.dim = dim
        self.layers = layers
        self.clamp = clamp
        self.param_tensors = tensors

    def constants(self):
        layers = []
        tensors = []
        for layer in self.layers:
            tl = {}
            for name, val in layer.items():
                if name == "mask":
                    tl[name] = val
                    continue
                tl[name] = ad.constant(val.values)
                tensors.append(tl[name])
            layers.append(tl)
        return FlowView(self.dim, layers, self.clamp, tensors)

    def _nets(self, layer, xa):
        s = ad.tanh(xa @ layer["s_w1"] + layer["s_b1"]) @ layer["s_w2"] + layer["s_b2"]
        t = ad.tanh(xa @ layer["t_w1"] + layer["t_b1"]) @ layer["t_w2"] + layer["t_b2"]
        return _soft_clamp(s, self.clamp), t

    def apply(self, x):
        """Forward map on a batch, (B, d) tensor -> (B, d)."""
        if self.dim == 1:
            return self._apply_1d(x)
        out = x
        for layer in self.layers:
            mask = layer["mask"]
            ia = np.flatnonzero(mask)
            ib = np.flatnonzero(~mask)
            xa = ad.take(out, ia, axis=1)
            xb = ad.take(out, ib, axis=1)
            s, t = self._nets(layer, xa)
            yb = xb * ad.exp(s) + t
            perm = np.argsort(np.concatenate([ia, ib]))
            out = ad.take(ad.concat([xa, yb], axis=1), perm, axis=1)
        return out

    def invert(self, y):
        """Inverse map on a batch; exact layer-by-layer inversion."""
        if self.dim == 1:
            return self._invert_1d(y)
        out = y
        for layer in reversed(self.layers):
            mask = layer["mask"]
            ia = np.flatnonzero(mask)
            ib = np.flatnonzero(~mask)
            ya = ad.take(out, ia, axis=1)
            yb = ad.take(out, ib, axis=1)
            s, t = self._nets(layer, ya)
            xb = (yb - t) * ad.exp(-s)
            perm = np.argsort(np.concatenate([ia, ib]))
            out = ad.take(ad.concat([ya, xb], axis=1), perm, axis=1)
        return out

    def jacobians(self, x):
        """Flow Jacobians at each row, (B, d) -> (B, d, d), J[b, i, j] = dy_j/dx_i.

        Pushes the identity tangent through every layer, so the result stays
        on the tape and the Dirichlet energy is trainable.
        """
        if self.dim == 1:
            d1 = self._deriv_1d(x)
            return ad.reshape(d1, (x.shape[0], 1, 1))
        batch, d = x.shape
        jac = ad.constant(np.broadcast_to(np.eye(d), (batch, d, d)).copy())
        out = x
        for layer in self.layers:
            mask = layer["mask"]
            ia = np.flatnonzero(mask)
            ib = np.flatnonzero(~mask)
            xa = ad.take(out, ia, axis=1)
            xb = ad.take(out, ib, axis=1)
            ja = ad.take(jac, ia, axis=2)
            jb = ad.take(jac, ib, axis=2)

            u1 = xa @ layer["s_w1"] + layer["s_b1"]
            h1 = ad.tanh(u1)
            sraw = h1 @ layer["s_w2"] + layer["s_b2"]
            s = _soft_clamp(sraw, self.clamp)
            u2 = xa @ layer["t_w1"] + layer["t_b1"]
            h2 = ad.tanh(u2)
            t = h2 @ layer["t_w2"] + layer["t_b2"]

            def tangent(h, u, w1, w2):
                du = ja @ w1
                dh = ad.reshape(1.0 - ad.square(h), (batch, 1, u.shape[1])) * du
                return dh @ w2

            dsraw = tangent(h1, u1, layer["s_w1"], layer["s_w2"])
            ds = ad.reshape(1.0 - ad.square(ad.tanh(sraw * (1.0 / self.clamp))), (batch, 1, len(ib))) * dsraw
            dt = tangent(h2, u2, layer["t_w1"], layer["t_w2"])

            es = ad.exp(s)
            djb = jb * ad.reshape(es, (batch, 1, len(ib))) + ad.reshape(xb * es, (batch, 1, len(ib))) * ds + dt
            perm = np.argsort(np.concatenate([ia, ib]))
            jac = ad.take(ad.concat([ja, djb], axis=2), perm, axis=2)

            yb = xb * es + t
            out = ad.take(ad.concat([xa, yb], axis=1), perm, axis=1)
        return jac

    # -- one-dimensional monotone map ------------------------------------

    def _terms_1d(self, x):
        layer = self.layers[0]
        gate2 = ad.square(layer["gate"])
        pre = ad.reshape(x, (x.shape[0], 1)) * layer["slope"] + layer["offset"]
        bumps = ad.sum_(gate2 * layer["slope"] * ad.softplus(pre), axis=1)
        scale = ad.exp(_soft_clamp(layer["log_scale"], self.clamp))
        lin = ad.reshape(ad.reshape(x, (x.shape[0], 1)) * scale + layer["shift"], (x.shape[0],))
        return lin + bumps

    def _apply_1d(self, x):
        flat = ad.reshape(x, (x.shape[0],))
        return ad.reshape(self._terms_1d(flat), (x.shape[0], 1))

    def _deriv_1d(self, x):
        layer = self.layers[0]
        flat = ad.reshape(x, (x.shape[0],))
        gate2 = ad.square(layer["gate"])
        pre = ad.reshape(flat, (x.shape[0], 1)) * layer["slope"] + layer["offset"]
        dbumps = ad.sum_(gate2 * ad.square(layer["slope"]) * ad.sigmoid(pre), axis=1)
        scale = ad.exp(_soft_clamp(layer["log_scale"], self.clamp))
        return dbumps + ad.reshape(scale, ())

    def _invert_1d(self, y):
        """Newton with bisection bracketing; differentiated implicitly."""
        yflat = y.values.reshape(-1)
        const = self.constants()

        def fwd(v):
            return const._terms_1d(ad.constant(v)).values

        def dfwd(v):
            return const._deriv_1d(ad.constant(np.asarray(v)[:, None])).values

        lo = np.full_like(yflat, -1.0)
        hi = np.full_like(yflat, 1.0)
        for _ in range(200):
            grow = fwd(lo) > yflat
            if not grow.any():
                break
            lo[grow] *= 2.0
        for _ in range(200):
            grow = fwd(hi) < yflat
            if not grow.any():
                break
            hi[grow] *= 2.0
        v = 0.5 * (lo + hi)
        for _ in range(100):
            fv = fwd(v)
            dv = dfwd(v)
            step = (fv - yflat) / dv
            vn = v - step
            bad = (vn < lo) | (vn > hi)
            vn[bad] = 0.5 * (lo[bad] + hi[bad])
            above = fwd(vn) > yflat
            hi = np.where(above, vn, hi)
            lo = np.where(above, lo, vn)
            v = vn
            if np.max(np.abs(step)) < 1e-14 * (1.0 + np.max(np.abs(v))):
                break
        vstar = v.copy()

        view = self

        def vjp(upstream):
            up = upstream.reshape(-1)
            deriv = dfwd(vstar)
            gy = up / deriv
            tape = ad.Tape()
            sub = FlowView(
                view.dim,
                [
                    {k: (t if k == "mask" else tape.leaf(t.values)) for k, t in layer.items()}
                    for layer in view.layers
                ],
                view.clamp,
                [],
            )
            out = sub._terms_1d(ad.constant(vstar))
            s = ad.sum_(out * ad.constant(-gy))
            grads = ad.backward(s)
            pgrads = []
            for layer in sub.layers:
                for k, t in layer.items():
                    if k != "mask":
                        pgrads.append(grads.get(t).values)
            return [gy[:, None]] + pgrads

        return ad.custom(vstar[:, None], [y] + list(self.param_tensors), vjp)


# ---------------------------------------------------------------------------
# composed cost model


@dataclass
class CostModel:
    """c(x, y) = h(flow_src(x) - flow_tgt(y)); missing flows mean identity."""

    cost: ConvexCost
    source_flow: CouplingFlow = None
    target_flow: CouplingFlow = None
    shared_flow: bool = False

    def __post_init__(self):
        if self.shared_flow:
            if self.source_flow is None:
                raise ValueError("shared_flow requires a source flow")
            self.target_flow = self.source_flow

    @property
    def dim(self):
        return self.cost.dim

    @property
    def has_flows(self):
        return self.source_flow is not None or self.target_flow is not None

    def param_groups(self):
        """Ordered parameter arrays split into optimizer groups."""
        groups = {"icnn": list(self.cost.param_items()), "flow": []}
        if self.source_flow is not None:
            groups["flow"] += [("src." + n, a) for n, a in self.source_flow.param_items()]
        if self.target_flow is not None and not self.shared_flow:
            groups["flow"] += [("tgt." + n, a) for n, a in self.target_flow.param_items()]
        return groups

    def project(self):
        self.cost.icnn.project_nonnegative()

    def tensorize(self, tape):
        cost_view = self.cost.tensorize(tape)
        src_view = self.source_flow.tensorize(tape) if self.source_flow is not None else None
        if self.shared_flow:
            tgt_view = src_view
        else:
            tgt_view = self.target_flow.tensorize(tape) if self.target_flow is not None else None
        return CostModelView(self, cost_view, src_view, tgt_view)

    def fingerprint_bytes(self):
        parts = []
        for group in self.param_groups().values():
            for _, arr in group:
                parts.append(arr.tobytes())
        parts.append(np.float64(self.cost.alpha).tobytes())
        return b"".join(parts)


class CostModelView:
    def __init__(self, model, cost_view, src_view, tgt_view):
        self.model = model
        self.cost = cost_view
        self.source_flow = src_view
        self.target_flow = tgt_view
        self.param_tensors = list(cost_view.param_tensors)
        if src_view is not None:
            self.param_tensors += src_view.param_tensors
        if tgt_view is not None and tgt_view is not src_view:
            self.param_tensors += tgt_view.param_tensors

    def push_source(self, x):
        return self.source_flow.apply(x) if self.source_flow is not None else x

    def push_target(self, y):
        return self.target_flow.apply(y) if self.target_flow is not None else y

    def pull_target(self, y):
        return self.target_flow.invert(y) if self.target_flow is not None else y

    def pull_source(self, x):
        return self.source_flow.invert(x) if self.source_flow is not None else x

    def pair_values(self, x, y):
        """Cost on aligned rows of two (B, d) tensors -> (B,)."""
        return self.cost.value(self.push_source(x) - self.push_target(y))


# ---------------------------------------------------------------------------
# spec-level scalar conveniences


def icnn_forward(params, z, tape=None):
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if z.shape != (params.input_dim,):
        raise ad.ShapeError("icnn_forward", z.shape, (params.input_dim,))
    layers = params.tensorize(tape)
    out = _icnn_apply(layers, ad.constant(z[None, :]))
    return out if tape is not None else out.item()


def cost_h(cost, z):
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    return float(cost.tensorize(None).value_np(z[None, :])[0])


def flow_forward(flow, x):
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return flow.tensorize(None).apply(ad.constant(x[None, :])).values[0]


def flow_inverse(flow, y):
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    return flow.tensorize(None).invert(ad.constant(y[None, :])).values[0]


def evaluate(model, x, y):
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise ad.ShapeError("evaluate", x.shape, y.shape)
    view = model.tensorize(None)
    return float(view.pair_values(ad.constant(x[None, :]), ad.constant(y[None, :])).values[0])


# ---------------------------------------------------------------------------
# JSON checkpointing


def _icnn_to_doc(p):
    return {
        "input_dim": p.input_dim,
        "hidden_sizes": list(p.hidden_sizes),
        "layers": [{k: v.tolist() for k, v in layer.items()} for layer in p.layers],
    }


def _icnn_from_doc(doc):
    layers = [{k: np.asarray(v, dtype=np.float64) for k, v in layer.items()} for layer in doc["layers"]]
    p = IcnnParams(int(doc["input_dim"]), [int(h) for h in doc["hidden_sizes"]], layers)
    sizes = p.hidden_sizes + [1]
    if len(layers) != len(sizes):
        raise ValueError("icnn layer count does not match hidden_sizes")
    for i, (layer, width) in enumerate(zip(layers, sizes)):
        if layer["wx"].shape != (p.input_dim, width) or layer["b"].shape != (width,):
            raise ValueError(f"icnn layer {i} has inconsistent shapes")
        if i > 0 and layer["wz"].min() < 0:
            raise ValueError(f"icnn layer {i} has negative propagation weights")
    if sizes[-1] != 1:
        raise ValueError("icnn output layer must have width 1")
    return p


def _flow_to_doc(f):
    if f is None:
        return None
    return {
        "dim": f.dim,
        "clamp": f.clamp,
        "layers": [
            {k: (v.astype(int).tolist() if k == "mask" else v.tolist()) for k, v in layer.items()}
            for layer in f.layers
        ],
    }


def _flow_from_doc(doc):
    if doc is None:
        return None
    layers = []
    for layer in doc["layers"]:
        tl = {}
        for k, v in layer.items():
            tl[k] = np.asarray(v, dtype=bool) if k == "mask" else np.asarray(v, dtype=np.float64)
        layers.append(tl)
    return CouplingFlow(int(doc["dim"]), layers, float(doc["clamp"]))


def save_cost_model(path, model, extra=None):
    doc = {
        "icnn": _icnn_to_doc(model.cost.icnn),
        "alpha": model.cost.alpha,
        "symmetric": model.cost.symmetric,
        "source_flow": _flow_to_doc(model.source_flow),
        "target_flow": None if model.shared_flow else _flow_to_doc(model.target_flow),
        "shared_flow": model.shared_flow,
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_cost_model(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc["alpha"] <= 0:
        raise ValueError("checkpoint has non-positive alpha")
    cost = ConvexCost(_icnn_from_doc(doc["icnn"]), float(doc["alpha"]), bool(doc["symmetric"]))
    src = _flow_from_doc(doc["source_flow"])
    if doc["shared_flow"]:
        model = CostModel(cost, source_flow=src, shared_flow=True)
    else:
        model = CostModel(cost, source_flow=src, target_flow=_flow_from_doc(doc["target_flow"]))
    return model, doc.get("extra")
