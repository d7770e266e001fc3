"""Dense float64 tensors with a reverse-mode differentiation tape.

Operations are recorded on the innermost active :class:`Tape` whenever at
least one operand is tracked by it::

    with Tape() as tape:
        w = tape.watch(w0)
        loss = ad.sum(ad.square(x @ w))
    (gw,) = tape.gradient(loss, [w])

Every op kind lives in the ``OPS`` registry as a forward/backward pair, which
is also what :meth:`Tape.replay` re-executes.
"""

from __future__ import annotations

import builtins
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from neurodyn.errors import ContractError, DimensionError, DomainError

__all__ = [
    "OPS", "Tape", "Tensor", "abs", "add", "concat", "constant", "conv1d", "div",
    "exp", "layer_norm", "l2_normalize", "log", "log_softmax", "matmul", "max",
    "mean", "mul", "relu", "reshape", "scalar_mul", "sigmoid", "slice", "softmax",
    "sqrt", "square", "sub", "sum", "transpose",
]

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


@dataclass(frozen=True)
class OpDef:
    forward: Callable
    backward: Callable
    meta: Callable | None = None


OPS: dict[str, OpDef] = {}


def _register(kind, forward, backward, meta=None):
    OPS[kind] = OpDef(forward, backward, meta)


@dataclass
class Node:
    kind: str
    inputs: tuple
    attrs: dict = field(default_factory=dict)
    saved: object = None


class Tensor:
    """Immutable n-d float64 value, optionally tracked by a tape."""

    __slots__ = ("data", "tape", "node", "meta")
    __array_priority__ = 100

    def __init__(self, data, *, _tape=None, _node=-1, _copy=True):
        arr = np.array(data, dtype=np.float64) if _copy else data
        arr.flags.writeable = False
        self.data = arr
        self.tape = _tape
        self.node = _node
        self.meta = {}

    @property
    def shape(self):
        return self.data.shape

    @property
    def dims(self):
        return list(self.data.shape)

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def __repr__(self):
        tracked = "" if self.tape is None else f", node={self.node}"
        return f"Tensor({self.data!r}{tracked})"

    def __len__(self):
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, 1.0 / other)
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return slice(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def constant(x) -> Tensor:
    """Untracked tensor; gradients never flow into it."""
    if isinstance(x, Tensor):
        return Tensor(x.data, _copy=False)
    return Tensor(x)


class Tape:
    """Append-only record of executed ops, differentiable in reverse."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.values: list[np.ndarray] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def _push(self, node, value):
        self.nodes.append(node)
        self.values.append(value)
        return len(self.nodes) - 1

    def watch(self, x) -> Tensor:
        """Register ``x`` as a differentiable leaf."""
        arr = x.data if isinstance(x, Tensor) else np.array(x, dtype=np.float64)
        t = Tensor(arr)
        t.tape = self
        t.node = self._push(Node("leaf", ()), t.data)
        return t

    def _input_id(self, t: Tensor):
        if t.tape is self:
            return t.node
        return self._push(Node("const", ()), t.data)

    def gradient(self, root: Tensor, sources):
        """Gradients of scalar ``root`` w.r.t. each source, shaped like the source."""
        single = isinstance(sources, Tensor)
        sources = [sources] if single else list(sources)
        if root.size != 1:
            raise ContractError(f"gradient root must be scalar, got shape {root.shape}")
        grads: list = [None] * len(self.nodes)
        if root.tape is self:
            grads[root.node] = np.ones(root.shape)
            for i in range(root.node, -1, -1):
                g = grads[i]
                node = self.nodes[i]
                if g is None or node.kind in ("leaf", "const"):
                    continue
                ins = [self.values[j] for j in node.inputs]
                gin = OPS[node.kind].backward(g, ins, self.values[i], node.saved, **node.attrs)
                for j, gj in zip(node.inputs, gin):
                    if gj is None:
                        continue
                    grads[j] = gj if grads[j] is None else grads[j] + gj
        out = []
        for s in sources:
            g = grads[s.node] if s.tape is self and grads[s.node] is not None else None
            out.append(np.zeros(s.shape) if g is None else np.array(g, dtype=np.float64))
        return out[0] if single else out

    def replay(self, feeds=None) -> list[np.ndarray]:
        """Re-run every recorded op; ``feeds`` maps leaf tensors to new values."""
        feeds = {t.node: np.asarray(v, dtype=np.float64) for t, v in (feeds or {}).items()}
        values = []
        for i, node in enumerate(self.nodes):
            if node.kind == "leaf":
                values.append(feeds.get(i, self.values[i]))
            elif node.kind == "const":
                values.append(self.values[i])
            else:
                ins = [values[j] for j in node.inputs]
                out, _ = OPS[node.kind].forward(ins, **node.attrs)
                values.append(out)
        return values


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(kind, inputs, **attrs) -> Tensor:
    inputs = [_as_tensor(x) for x in inputs]
    op = OPS[kind]
    out, saved = op.forward([t.data for t in inputs], **attrs)
    out = np.asarray(out, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise DomainError(f"{kind} produced non-finite values")
    stack = _tape_stack()
    tape = stack[-1] if stack else None
    if tape is not None and any(t.tape is tape for t in inputs):
        ids = tuple(tape._input_id(t) for t in inputs)
        result = Tensor(out, _copy=False)
        result.tape = tape
        result.node = tape._push(Node(kind, ids, attrs, saved), result.data)
    else:
        result = Tensor(out, _copy=False)
    if op.meta is not None:
        result.meta = op.meta(saved)
    return result


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    g = g.sum(axis=tuple(range(g.ndim - len(shape)))) if g.ndim > len(shape) else g
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(kind, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} do not conform") from None


# -- elementwise binary ---------------------------------------------------

def _add_fwd(ins):
    _check_broadcast("add", *ins)
    return ins[0] + ins[1], None


def _sub_fwd(ins):
    _check_broadcast("sub", *ins)
    return ins[0] - ins[1], None


def _mul_fwd(ins):
    _check_broadcast("mul", *ins)
    return ins[0] * ins[1], None


def _div_fwd(ins):
    _check_broadcast("div", *ins)
    if np.any(ins[1] == 0):
        raise DomainError("div: division by zero")
    return ins[0] / ins[1], None


_register("add", _add_fwd,
          lambda g, ins, out, s: (_unbroadcast(g, ins[0].shape), _unbroadcast(g, ins[1].shape)))
_register("sub", _sub_fwd,
          lambda g, ins, out, s: (_unbroadcast(g, ins[0].shape), _unbroadcast(-g, ins[1].shape)))
_register("mul", _mul_fwd,
          lambda g, ins, out, s: (_unbroadcast(g * ins[1], ins[0].shape),
                                  _unbroadcast(g * ins[0], ins[1].shape)))
_register("div", _div_fwd,
          lambda g, ins, out, s: (_unbroadcast(g / ins[1], ins[0].shape),
                                  _unbroadcast(-g * out / ins[1], ins[1].shape)))
_register("scalar_mul", lambda ins, c: (ins[0] * c, None),
          lambda g, ins, out, s, c: (g * c,))


# -- linear algebra -------------------------------------------------------

def _matmul_fwd(ins):
    a, b = ins
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch dims {a.shape} vs {b.shape}") from None
    return a @ b, None


def _matmul_bwd(g, ins, out, s):
    a, b = ins
    return (_unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape),
            _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape))


_register("matmul", _matmul_fwd, _matmul_bwd)


def _conv1d_fwd(ins, padding):
    x, w = ins[0], ins[1]
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv1d: input {x.shape}, kernel {w.shape}")
    if len(ins) == 3 and ins[2].shape != (w.shape[0],):
        raise DimensionError(f"conv1d: bias {ins[2].shape} for {w.shape[0]} filters")
    B, C, T = x.shape
    O, _, k = w.shape
    Tp = T + 2 * padding
    if Tp < k:
        raise DimensionError("conv1d: kernel longer than padded input")
    tout = Tp - k + 1
    # channel-major padded input, so every tap shares one GEMM
    xt = np.zeros((C, B, Tp))
    xt[:, :, padding:padding + T] = x.transpose(1, 0, 2)
    Y = (w.transpose(2, 0, 1).reshape(k * O, C) @ xt.reshape(C, B * Tp)).reshape(k, O, B, Tp)
    out = Y[0, :, :, :tout].copy()
    for j in range(1, k):
        out += Y[j, :, :, j:j + tout]
    if len(ins) == 3:
        out += ins[2][:, None, None]
    return out.transpose(1, 0, 2), xt


def _conv1d_bwd(g, ins, out, xt, padding):
    x, w = ins[0], ins[1]
    B, C, T = x.shape
    O, _, k = w.shape
    Tp = xt.shape[2]
    tout = g.shape[2]
    gt = g.transpose(1, 0, 2)
    # G[j, o, b, s] = g[b, o, s - j]
    G = np.zeros((k, O, B, Tp))
    for j in range(k):
        G[j, :, :, j:j + tout] = gt
    G = G.reshape(k * O, B * Tp)
    gw = (G @ xt.reshape(C, B * Tp).T).reshape(k, O, C).transpose(1, 2, 0)
    gxt = (w.transpose(1, 2, 0).reshape(C, k * O) @ G).reshape(C, B, Tp)
    grads = [gxt[:, :, padding:padding + T].transpose(1, 0, 2), gw]
    if len(ins) == 3:
        grads.append(g.sum(axis=(0, 2)))
    return grads


_register("conv1d", _conv1d_fwd, _conv1d_bwd)


def _transpose_fwd(ins, axes):
    return np.transpose(ins[0], axes), None


def _transpose_bwd(g, ins, out, s, axes):
    return (np.transpose(g, np.argsort(axes)),)


_register("transpose", _transpose_fwd, _transpose_bwd)


def _reshape_fwd(ins, shape):
    try:
        return ins[0].reshape(shape), None
    except ValueError:
        raise DimensionError(f"cannot reshape {ins[0].shape} to {shape}") from None


_register("reshape", _reshape_fwd, lambda g, ins, out, s, shape: (g.reshape(ins[0].shape),))


# -- elementwise unary ----------------------------------------------------

def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _log_fwd(ins):
    x = ins[0]
    if np.any(x < 0):
        raise DomainError("log of negative value")
    if np.any(x == 0):
        raise DomainError("log of zero")
    return np.log(x), None


def _sqrt_fwd(ins):
    if np.any(ins[0] < 0):
        raise DomainError("sqrt of negative value")
    return np.sqrt(ins[0]), None


def _sqrt_bwd(g, ins, out, s):
    # subgradient 0 at the origin
    safe = np.where(out > 0, out, 1.0)
    return (np.where(out > 0, g / (2.0 * safe), 0.0),)


_register("relu", lambda ins: (np.maximum(ins[0], 0.0), None),
          lambda g, ins, out, s: (g * (ins[0] > 0),))
_register("sigmoid", lambda ins: (_sigmoid(ins[0]), None),
          lambda g, ins, out, s: (g * out * (1.0 - out),))
_register("exp", lambda ins: (np.exp(ins[0]), None),
          lambda g, ins, out, s: (g * out,))
_register("log", _log_fwd, lambda g, ins, out, s: (g / ins[0],))
_register("square", lambda ins: (ins[0] * ins[0], None),
          lambda g, ins, out, s: (2.0 * g * ins[0],))
_register("sqrt", _sqrt_fwd, _sqrt_bwd)
_register("abs", lambda ins: (np.abs(ins[0]), None),
          lambda g, ins, out, s: (g * np.sign(ins[0]),))


# -- normalizations -------------------------------------------------------

def _softmax_fwd(ins, axis):
    x = ins[0]
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True), None


def _softmax_bwd(g, ins, out, s, axis):
    return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)


def _log_softmax_fwd(ins, axis):
    x = ins[0]
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    return shifted - lse, None


def _log_softmax_bwd(g, ins, out, s, axis):
    return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)


_register("softmax", _softmax_fwd, _softmax_bwd)
_register("log_softmax", _log_softmax_fwd, _log_softmax_bwd)


def _layer_norm_fwd(ins, axis, eps):
    x = ins[0]
    mu = x.mean(axis=axis, keepdims=True)
    var = x.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat, inv


def _layer_norm_bwd(g, ins, out, inv, axis, eps):
    n = ins[0].shape[axis]
    gsum = g.sum(axis=axis, keepdims=True)
    gx = (inv / n) * (n * g - gsum - out * (g * out).sum(axis=axis, keepdims=True))
    return (gx,)


_register("layer_norm", _layer_norm_fwd, _layer_norm_bwd)


def _l2n_fwd(ins, axis):
    x = ins[0]
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    zero = norm == 0
    out = x / np.where(zero, 1.0, norm)
    return out, (norm, zero)


def _l2n_bwd(g, ins, out, saved, axis):
    norm, zero = saved
    gx = (g - out * (g * out).sum(axis=axis, keepdims=True)) / np.where(zero, 1.0, norm)
    return (np.where(zero, 0.0, gx),)


_register("l2_normalize", _l2n_fwd, _l2n_bwd,
          meta=lambda saved: {"zero_rows": int(np.count_nonzero(saved[1]))})


# -- reductions -----------------------------------------------------------

def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def _count(shape, axis):
    if axis is None:
        return int(np.prod(shape))
    axes = (axis,) if np.isscalar(axis) else tuple(axis)
    return int(np.prod([shape[a] for a in axes]))


_register("sum", lambda ins, axis, keepdims: (ins[0].sum(axis=axis, keepdims=keepdims), None),
          lambda g, ins, out, s, axis, keepdims: (_expand(g, ins[0].shape, axis, keepdims),))
_register("mean", lambda ins, axis, keepdims: (ins[0].mean(axis=axis, keepdims=keepdims), None),
          lambda g, ins, out, s, axis, keepdims: (
              _expand(g, ins[0].shape, axis, keepdims) / _count(ins[0].shape, axis),))


def _max_fwd(ins, axis, keepdims):
    x = ins[0]
    if axis is None:
        idx = np.argmax(x)
        return x.reshape(-1)[idx].reshape((1,) * x.ndim if keepdims else ()), idx
    return np.max(x, axis=axis, keepdims=keepdims), np.argmax(x, axis=axis)


def _max_bwd(g, ins, out, idx, axis, keepdims):
    x = ins[0]
    gx = np.zeros(x.shape)
    if axis is None:
        gx.reshape(-1)[idx] = np.asarray(g).reshape(-1)[0]
        return (gx,)
    gk = g if keepdims else np.expand_dims(g, axis)
    np.put_along_axis(gx, np.expand_dims(idx, axis), gk, axis=axis)
    return (gx,)


_register("max", _max_fwd, _max_bwd)


# -- structural -----------------------------------------------------------

def _slice_fwd(ins, index):
    return ins[0][index], None


def _slice_bwd(g, ins, out, s, index):
    gx = np.zeros(ins[0].shape)
    gx[index] = g
    return (gx,)


_register("slice", _slice_fwd, _slice_bwd)


def _concat_fwd(ins, axis):
    try:
        return np.concatenate(ins, axis=axis), None
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None


def _concat_bwd(g, ins, out, s, axis):
    bounds = np.cumsum([x.shape[axis] for x in ins])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


_register("concat", _concat_fwd, _concat_bwd)


# -- public functional API ------------------------------------------------

def add(a, b):
    return _apply("add", [a, b])


def sub(a, b):
    return _apply("sub", [a, b])


def mul(a, b):
    return _apply("mul", [a, b])


def div(a, b):
    return _apply("div", [a, b])


def scalar_mul(x, c):
    return _apply("scalar_mul", [x], c=float(c))


def matmul(a, b):
    return _apply("matmul", [a, b])


def conv1d(x, kernel, bias=None, padding=0):
    """Stride-1 cross-correlation of ``x`` (B, Cin, T) with ``kernel`` (Cout, Cin, K)."""
    ins = [x, kernel] if bias is None else [x, kernel, bias]
    return _apply("conv1d", ins, padding=int(padding))


def transpose(x, axes=None):
    x = _as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return _apply("transpose", [x], axes=tuple(axes))


def reshape(x, shape):
    return _apply("reshape", [x], shape=tuple(shape))


def relu(x):
    return _apply("relu", [x])


def sigmoid(x):
    return _apply("sigmoid", [x])


def exp(x):
    return _apply("exp", [x])


def log(x):
    return _apply("log", [x])


def square(x):
    return _apply("square", [x])


def sqrt(x):
    return _apply("sqrt", [x])


def abs(x):  # noqa: A001
    return _apply("abs", [x])


def softmax(x, axis=-1):
    return _apply("softmax", [x], axis=axis)


def log_softmax(x, axis=-1):
    return _apply("log_softmax", [x], axis=axis)


def layer_norm(x, axis=-1, eps=1e-5):
    return _apply("layer_norm", [x], axis=axis, eps=eps)


def l2_normalize(x, axis=-1):
    """Unit-norm rows; zero rows stay zero and are counted in ``meta['zero_rows']``."""
    return _apply("l2_normalize", [x], axis=axis)


def sum(x, axis=None, keepdims=False):  # noqa: A001
    return _apply("sum", [x], axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    return _apply("mean", [x], axis=axis, keepdims=keepdims)


def max(x, axis=None, keepdims=False):  # noqa: A001
    return _apply("max", [x], axis=axis, keepdims=keepdims)


def slice(x, index):  # noqa: A001
    if not isinstance(index, tuple):
        index = (index,)
    for ix in index:
        if not (ix is None or ix is Ellipsis or isinstance(ix, (int, np.integer, builtins.slice))):
            raise ContractError("only basic (int/slice) indexing is supported")
    return _apply("slice", [x], index=index)


def concat(tensors, axis=0):
    return _apply("concat", list(tensors), axis=axis)
