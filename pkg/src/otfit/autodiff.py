"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

A ``Tape`` records primitive operations as they execute; ``backward`` replays
the records in reverse to accumulate gradients of a scalar root with respect
to every leaf. Tensors without a tape handle are constants: operating on
constants performs plain numpy arithmetic and records nothing, so the same
code paths serve both differentiable and detached evaluation.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "ShapeError",
    "constant",
    "record",
    "backward",
    "hessian_vector",
    "custom",
]


class ShapeError(ValueError):
    """Raised when operand shapes are invalid for an op kind."""

    def __init__(self, op, *shapes):
        super().__init__(f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}")
        self.op = op
        self.shapes = shapes


class Tensor:
    """Immutable float64 array, optionally registered on a tape."""

    __slots__ = ("values", "tape", "nid")

    def __init__(self, values, tape=None, nid=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.tape = tape
        self.nid = nid

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    @property
    def ndim(self):
        return self.values.ndim

    def item(self):
        return float(self.values)

    def __repr__(self):
        tag = f" nid={self.nid}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    # Arithmetic sugar; constants are auto-wrapped.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return negate(self)

    def __pow__(self, exponent):
        return power(self, exponent)


def constant(values):
    """Tensor with no tape handle (gradients never flow into it)."""
    if isinstance(values, Tensor):
        return values if values.tape is None else Tensor(values.values)
    return Tensor(values)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive ops; function-scoped, discarded after use."""

    def __init__(self):
        self._entries = []  # (out_nid, parent_nids, vjp)
        self._num_nodes = 0
        self._leaf_ids = []

    def _new_id(self):
        nid = self._num_nodes
        self._num_nodes += 1
        return nid

    def leaf(self, values):
        """Register an input tensor whose gradient backward() reports."""
        t = Tensor(values, self, self._new_id())
        self._leaf_ids.append(t.nid)
        return t

    def record_node(self, values, parents, vjp):
        """Append one op: ``vjp(upstream)`` returns one array/None per parent."""
        out = Tensor(values, self, self._new_id())
        pids = tuple(p.nid if p.tape is self else None for p in parents)
        self._entries.append((out.nid, pids, vjp))
        return out

    def __len__(self):
        return len(self._entries)


def _common_tape(tensors, op):
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError(f"{op}: operands recorded on different tapes")
    return tape


def _emit(op, values, parents, make_vjp):
    """Record when any parent is on a tape, else return a constant."""
    tape = _common_tape(parents, op)
    if tape is None:
        return Tensor(values)
    return tape.record_node(values, parents, make_vjp())


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(op, a, b, fwd, dfa, dfb):
    try:
        values = fwd(a.values, b.values)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None

    def make_vjp():
        ash, bsh = a.shape, b.shape
        av, bv = a.values, b.values

        def vjp(u):
            return (_unbroadcast(dfa(u, av, bv), ash), _unbroadcast(dfb(u, av, bv), bsh))

        return vjp

    return _emit(op, values, (a, b), make_vjp)


# ---------------------------------------------------------------------------
# elementwise / broadcast primitives


def add(a, b):
    return _binary("add", a, b, np.add, lambda u, x, y: u, lambda u, x, y: u)


def sub(a, b):
    return _binary("sub", a, b, np.subtract, lambda u, x, y: u, lambda u, x, y: -u)


def mul(a, b):
    return _binary("mul", a, b, np.multiply, lambda u, x, y: u * y, lambda u, x, y: u * x)


def div(a, b):
    return _binary(
        "div",
        a,
        b,
        np.divide,
        lambda u, x, y: u / y,
        lambda u, x, y: -u * x / (y * y),
    )


def negate(a):
    return _emit("negate", -a.values, (a,), lambda: lambda u: (-u,))


def exp(a):
    out = np.exp(a.values)

    def make_vjp():
        ov = out
        return lambda u: (u * ov,)

    return _emit("exp", out, (a,), make_vjp)


def log(a):
    def make_vjp():
        av = a.values
        return lambda u: (u / av,)

    return _emit("log", np.log(a.values), (a,), make_vjp)


def sqrt(a):
    out = np.sqrt(a.values)

    def make_vjp():
        ov = out
        return lambda u: (u / (2.0 * ov),)

    return _emit("sqrt", out, (a,), make_vjp)


def square(a):
    def make_vjp():
        av = a.values
        return lambda u: (2.0 * av * u,)

    return _emit("square", np.square(a.values), (a,), make_vjp)


def power(a, exponent):
    """Elementwise a**p for a constant scalar exponent."""
    p = float(exponent)

    def make_vjp():
        av = a.values
        return lambda u: (u * p * av ** (p - 1.0),)

    return _emit("power", a.values**p, (a,), make_vjp)


def softplus(a):
    # log(1 + e^x) evaluated as logaddexp(0, x) to avoid overflow
    out = np.logaddexp(0.0, a.values)

    def make_vjp():
        av = a.values
        return lambda u: (u * _sigmoid_np(av),)

    return _emit("softplus", out, (a,), make_vjp)


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    out = _sigmoid_np(np.asarray(a.values, dtype=np.float64))

    def make_vjp():
        ov = out
        return lambda u: (u * ov * (1.0 - ov),)

    return _emit("sigmoid", out, (a,), make_vjp)


def tanh(a):
    out = np.tanh(a.values)

    def make_vjp():
        ov = out
        return lambda u: (u * (1.0 - ov * ov),)

    return _emit("tanh", out, (a,), make_vjp)


# ---------------------------------------------------------------------------
# reductions


def sum_(a, axis=None):
    def make_vjp():
        ash = a.shape

        def vjp(u):
            if axis is None:
                return (np.broadcast_to(u, ash).copy(),)
            return (np.broadcast_to(np.expand_dims(u, axis), ash).copy(),)

        return vjp

    return _emit("sum", a.values.sum(axis=axis), (a,), make_vjp)


def mean(a, axis=None):
    n = a.size if axis is None else a.shape[axis]

    def make_vjp():
        ash = a.shape

        def vjp(u):
            if axis is None:
                return (np.broadcast_to(u / n, ash).copy(),)
            return (np.broadcast_to(np.expand_dims(u, axis) / n, ash).copy(),)

        return vjp

    return _emit("mean", a.values.mean(axis=axis), (a,), make_vjp)


def max_(a, axis=None):
    """Max reduction; ties route the gradient to the first maximizer."""
    out = a.values.max(axis=axis)

    def make_vjp():
        av = a.values

        def vjp(u):
            if axis is None:
                g = np.zeros_like(av)
                g.flat[int(av.argmax())] = u
                return (g,)
            g = np.zeros_like(av)
            idx = np.expand_dims(av.argmax(axis=axis), axis)
            np.put_along_axis(g, idx, np.expand_dims(u, axis), axis)
            return (g,)

        return vjp

    return _emit("max", out, (a,), make_vjp)


def logsumexp(a, axis):
    """log Σ exp along ``axis`` with max-subtraction; backward is the softmax."""
    av = a.values
    hi = np.max(av, axis=axis, keepdims=True)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    out = np.squeeze(hi, axis) + np.log(np.sum(np.exp(av - hi), axis=axis))

    def make_vjp():
        def vjp(u):
            soft = np.exp(av - np.expand_dims(out, axis))
            return (np.expand_dims(u, axis) * soft,)

        return vjp

    return _emit("log-sum-exp", out, (a,), make_vjp)


def norm(a, axis=None):
    """Euclidean norm over all entries or along one axis."""
    out = np.sqrt(np.sum(np.square(a.values), axis=axis))

    def make_vjp():
        av = a.values

        def vjp(u):
            denom = out if axis is None else np.expand_dims(out, axis)
            up = u if axis is None else np.expand_dims(u, axis)
            return (up * av / denom,)

        return vjp

    return _emit("norm", out, (a,), make_vjp)


# ---------------------------------------------------------------------------
# linear algebra and shaping


def matmul(a, b):
    try:
        values = np.matmul(a.values, b.values)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def make_vjp():
        av, bv = a.values, b.values
        ash, bsh = a.shape, b.shape

        def vjp(u):
            if av.ndim == 1 and bv.ndim == 1:  # inner product
                return (u * bv, u * av)
            if av.ndim == 1:  # (k,) @ (..., k, n)
                ga = (u[..., None, :] * bv).sum(axis=-1)
                gb = av[:, None] * u[..., None, :]
            elif bv.ndim == 1:  # (..., m, k) @ (k,)
                ga = u[..., :, None] * bv
                gb = (av * u[..., :, None]).sum(axis=tuple(range(av.ndim - 1)))
            else:
                ga = np.matmul(u, np.swapaxes(bv, -1, -2))
                gb = np.matmul(np.swapaxes(av, -1, -2), u)
            return (_unbroadcast(ga, ash), _unbroadcast(gb, bsh))

        return vjp

    return _emit("matmul", values, (a, b), make_vjp)


def transpose(a, axes=None):
    def make_vjp():
        inv = None if axes is None else tuple(np.argsort(axes))
        return lambda u: (np.transpose(u, inv),)

    return _emit("transpose", np.transpose(a.values, axes), (a,), make_vjp)


def reshape(a, shape):
    def make_vjp():
        ash = a.shape
        return lambda u: (u.reshape(ash),)

    return _emit("reshape", a.values.reshape(shape), (a,), make_vjp)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    values = np.concatenate([t.values for t in tensors], axis=axis)

    def make_vjp():
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        return lambda u: tuple(np.split(u, splits, axis=axis))

    return _emit("concat", values, tuple(tensors), make_vjp)


def take(a, indices, axis):
    """Gather along an axis (also covers contiguous slicing)."""
    idx = np.asarray(indices, dtype=np.intp)

    def make_vjp():
        ash = a.shape

        def vjp(u):
            g = np.zeros(ash)
            sl = [slice(None)] * len(ash)
            for k, i in enumerate(idx):
                sl[axis] = i
                usl = [slice(None)] * u.ndim
                usl[axis] = k
                g[tuple(sl)] += u[tuple(usl)]
            return (g,)

        return vjp

    return _emit("slice", np.take(a.values, idx, axis=axis), (a,), make_vjp)


def softmin_scaled(costs, potential, scale):
    """Row softmin ``-s * log Σ_j exp((p_j - C_ij) / s)``, fused for Sinkhorn.

    One record per call; the backward recomputes the row softmax from the
    stored output instead of keeping any matrix-sized intermediate, which
    keeps long unrolled solver loops cheap to record.
    """
    s = float(scale)
    cv, pv = costs.values, potential.values
    if cv.ndim != 2 or pv.shape != (cv.shape[1],):
        raise ShapeError("softmin", cv.shape, pv.shape)
    logits = (pv[None, :] - cv) / s
    hi = logits.max(axis=1, keepdims=True)
    out = -s * (np.squeeze(hi, 1) + np.log(np.exp(logits - hi).sum(axis=1)))

    def make_vjp():
        def vjp(u):
            soft = np.exp((pv[None, :] - cv + out[:, None]) / s)
            gc = u[:, None] * soft
            return (gc, -gc.sum(axis=0))

        return vjp

    return _emit("softmin", out, (costs, potential), make_vjp)


def custom(values, parents, vjp):
    """Record an externally implemented op with an explicit backward rule."""
    return _emit("custom", values, tuple(parents), lambda: vjp)


# ---------------------------------------------------------------------------
# dispatcher, backward pass, Hessian-vector products

_OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "exp": exp,
    "log": log,
    "softplus": softplus,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "log-sum-exp": logsumexp,
    "sum": sum_,
    "mean": mean,
    "square": square,
    "sqrt": sqrt,
    "max": max_,
    "negate": negate,
    "concat": concat,
    "slice": take,
    "power": power,
    "norm": norm,
    "reshape": reshape,
    "transpose": transpose,
    "softmin": softmin_scaled,
}


def record(kind, inputs, **kwargs):
    """Apply a primitive by name; inputs is a Tensor or list of Tensors."""
    if kind not in _OPS:
        raise KeyError(f"unknown op kind {kind!r}")
    fn = _OPS[kind]
    if kind == "concat":
        return fn(inputs, **kwargs)
    if isinstance(inputs, (list, tuple)):
        return fn(*[_wrap(t) for t in inputs], **kwargs)
    return fn(_wrap(inputs), **kwargs)


class Gradients:
    """Gradient of a scalar root keyed by node id; untouched leaves are zero."""

    def __init__(self, tape, grads):
        self._tape = tape
        self._grads = grads

    def get(self, tensor):
        if tensor.tape is not self._tape or tensor.nid is None:
            raise KeyError("tensor does not live on the differentiated tape")
        g = self._grads.get(tensor.nid)
        if g is None:
            return Tensor(np.zeros(tensor.shape))
        return Tensor(g)

    def __getitem__(self, tensor):
        return self.get(tensor)


def backward(root):
    """Reverse pass from a scalar root; returns a :class:`Gradients` map."""
    if root.tape is None:
        raise ValueError("backward: root is a constant (no tape)")
    if root.size != 1:
        raise ValueError(f"backward: root must be scalar, got shape {root.shape}")
    tape = root.tape
    grads = {root.nid: np.ones(root.shape)}
    for out_nid, parent_nids, vjp in reversed(tape._entries):
        u = grads.pop(out_nid, None)
        if u is None:
            continue
        for pid, g in zip(parent_nids, vjp(u)):
            if pid is None or g is None:
                continue
            acc = grads.get(pid)
            grads[pid] = g if acc is None else acc + g
    return Gradients(tape, grads)


def gradient_of(fn, x):
    """Gradient of ``fn`` (Tensor -> scalar Tensor) at a plain array ``x``."""
    tape = Tape()
    xt = tape.leaf(x)
    out = fn(xt)
    return backward(out).get(xt).values


def hessian_vector(fn, x, v):
    """Hessian-vector product of a scalar function by central differences.

    Computes (∇f(x+δv) − ∇f(x−δv)) / 2δ with δ = 1e-5·(1+‖x‖); accurate to
    ~1e-4 relative, which is all downstream Hessian solves require.
    """
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if x.shape != v.shape:
        raise ShapeError("hessian_vector", x.shape, v.shape)
    delta = 1e-5 * (1.0 + np.linalg.norm(x))
    gp = gradient_of(fn, x + delta * v)
    gm = gradient_of(fn, x - delta * v)
    return (gp - gm) / (2.0 * delta)
