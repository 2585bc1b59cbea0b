"""Reverse-mode automatic differentiation on dense float64 arrays.

Every value is a `Tensor` wrapping a C-contiguous ``numpy`` float64 array.
Operations record their inputs and a backward closure; `backward` walks the
recorded graph once in reverse topological order and adds d(loss)/d(leaf)
into each leaf's ``grad``. Repeated `backward` calls therefore accumulate,
and `Parameter.zero_grad` resets.

Only the shapes the model needs are supported: 2-D matmul, elementwise ops
with numpy broadcasting, reductions, row gathers and a handful of fused
layers (linear, lstm_cell, row-wise bilinear form, masked log-softmax).
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "DimensionError",
    "GraphError",
    "no_grad",
    "grad_enabled",
    "backward",
    "const",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "tsum",
    "tmean",
    "reshape",
    "concat",
    "gather_rows",
    "gather_rc",
    "softmax",
    "log_softmax",
    "masked_log_softmax",
    "masked_entropy",
    "dropout",
    "linear",
    "lstm_cell",
    "bilinear_rowwise",
    "bce_with_logits",
    "shift_up_zero",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GraphError(RuntimeError):
    """The backward entry point was misused (non-scalar loss, etc.)."""


_local = threading.local()


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


class no_grad:
    """Thread-local context manager that disables graph recording."""

    def __enter__(self) -> "no_grad":
        self._prev = grad_enabled()
        _local.grad_enabled = False
        return self

    def __exit__(self, *exc) -> bool:
        _local.grad_enabled = self._prev
        return False


class Tensor:
    """Dense float64 array plus optional autodiff bookkeeping.

    ``data`` is always float64 and C-contiguous (row-major). ``grad`` stays
    ``None`` for constants and intermediates; leaves accumulate into it.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward_fn: Callable | None = None,
    ):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def assert_finite(self) -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError("tensor contains non-finite entries")
        return self

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable tensor with a persistent, pre-allocated gradient buffer."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.grad = np.zeros_like(self.data)
        self.name = name
        self.trainable = trainable

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def const(data) -> Tensor:
    """Wrap raw data as a non-differentiable tensor."""
    return Tensor(data)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward_fn: Callable) -> Tensor:
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn)
    return Tensor(data)


def _chain(grads: dict, t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    key = id(t)
    if key in grads:
        grads[key] = grads[key] + g
    else:
        grads[key] = g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> int:
    """Propagate d(loss) to every reachable leaf; returns ops visited.

    The loss must be a scalar. Leaf tensors (no recorded parents) have the
    gradient added into ``grad``; calling twice doubles leaf gradients.
    Every recorded op node is visited exactly once.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return 0

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        nid = id(node)
        if nid in seen:
            continue
        seen.add(nid)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    visited = 0
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
        else:
            visited += 1
            node._backward_fn(g, grads)
    return visited


# ---------------------------------------------------------------------------
# elementwise / arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def _bw(g, grads):
        _chain(grads, a, _unbroadcast(g, a.data.shape))
        _chain(grads, b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), _bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def _bw(g, grads):
        _chain(grads, a, _unbroadcast(g, a.data.shape))
        _chain(grads, b, _unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), _bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def _bw(g, grads):
        _chain(grads, a, _unbroadcast(g * b.data, a.data.shape))
        _chain(grads, b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), _bw)


def neg(a: Tensor) -> Tensor:
    def _bw(g, grads):
        _chain(grads, a, -g)

    return _make(-a.data, (a,), _bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def _bw(g, grads):
        _chain(grads, a, g * c)

    return _make(a.data * c, (a,), _bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = a.data @ b.data

    def _bw(g, grads):
        _chain(grads, a, g @ b.data.T)
        _chain(grads, b, a.data.T @ g)

    return _make(out, (a, b), _bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    out = np.where(mask, a.data, 0.0)

    def _bw(g, grads):
        _chain(grads, a, g * mask)

    return _make(out, (a,), _bw)


try:
    from scipy.special import expit as _sigmoid  # C ufunc, stable in both tails
except ImportError:  # pragma: no cover

    def _sigmoid(x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)

    def _bw(g, grads):
        _chain(grads, a, g * s * (1.0 - s))

    return _make(s, (a,), _bw)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def _bw(g, grads):
        _chain(grads, a, g * (1.0 - t * t))

    return _make(t, (a,), _bw)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)

    def _bw(g, grads):
        _chain(grads, a, g * e)

    return _make(e, (a,), _bw)


def log(a: Tensor) -> Tensor:
    def _bw(g, grads):
        _chain(grads, a, g / a.data)

    return _make(np.log(a.data), (a,), _bw)


# ---------------------------------------------------------------------------
# reductions / shape
# ---------------------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g, grads):
        if axis is None:
            _chain(grads, a, np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _chain(grads, a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(out, (a,), _bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def _bw(g, grads):
        _chain(grads, a, g.reshape(a.data.shape))

    return _make(out, (a,), _bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    arrays = [t.data for t in tensors]
    out = np.concatenate(arrays, axis=axis)
    sizes = [arr.shape[axis] for arr in arrays]
    offsets = np.cumsum([0] + sizes)

    def _bw(g, grads):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _chain(grads, t, g[tuple(idx)])

    return _make(out, tuple(tensors), _bw)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows of a 2-D tensor; the standard embedding lookup."""
    idx = np.asarray(idx, dtype=np.intp)
    out = a.data[idx]

    def _bw(g, grads):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _chain(grads, a, full)

    return _make(out, (a,), _bw)


def gather_rc(a: Tensor, rows, cols) -> Tensor:
    """Pick one entry per row of a 2-D tensor; returns a column vector."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    out = a.data[rows, cols][:, None]

    def _bw(g, grads):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, (rows, cols), g[:, 0])
            _chain(grads, a, full)

    return _make(out, (a,), _bw)


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def _bw(g, grads):
        dot = (g * s).sum(axis=axis, keepdims=True)
        _chain(grads, a, s * (g - dot))

    return _make(s, (a,), _bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def _bw(g, grads):
        _chain(grads, a, g - s * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), _bw)


def masked_log_softmax(a: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise log-softmax over the True entries of ``mask``.

    Masked-out entries get exactly -inf (probability exactly zero) and a
    zero gradient. Each row must have at least one legal entry.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.data.shape:
        raise DimensionError(f"mask shape {mask.shape} != logits shape {a.data.shape}")
    if not mask.any(axis=-1).all():
        raise GraphError("masked_log_softmax: a row has no legal entries")
    neg_inf = np.float64(-np.inf)
    masked = np.where(mask, a.data, neg_inf)
    rowmax = masked.max(axis=-1, keepdims=True)
    shifted = np.where(mask, a.data - rowmax, neg_inf)
    with np.errstate(over="ignore"):
        e = np.where(mask, np.exp(np.where(mask, shifted, 0.0)), 0.0)
    lse = np.log(e.sum(axis=-1, keepdims=True))
    out = np.where(mask, shifted - lse, neg_inf)
    probs = np.where(mask, np.exp(np.where(mask, out, 0.0)), 0.0)

    def _bw(g, grads):
        g = np.where(mask, g, 0.0)
        _chain(grads, a, g - probs * g.sum(axis=-1, keepdims=True))

    return _make(out, (a,), _bw)


def masked_entropy(log_probs: Tensor, mask: np.ndarray) -> Tensor:
    """Per-row entropy -sum p*log p restricted to legal entries; (n,1)."""
    mask = np.asarray(mask, dtype=bool)
    lp = np.where(mask, log_probs.data, 0.0)
    p = np.where(mask, np.exp(lp), 0.0)
    out = -(p * lp).sum(axis=-1, keepdims=True)

    def _bw(g, grads):
        _chain(grads, log_probs, np.where(mask, -g * p * (lp + 1.0), 0.0))

    return _make(out, (log_probs,), _bw)


# ---------------------------------------------------------------------------
# fused layers
# ---------------------------------------------------------------------------


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: scales by 1/(1-p) at train time, identity at eval."""
    if not training or p <= 0.0:
        return a
    if rng is None:
        raise GraphError("dropout in training mode needs an explicit Generator")
    keep = (rng.random(a.data.shape) >= p) / (1.0 - p)
    out = a.data * keep

    def _bw(g, grads):
        _chain(grads, a, g * keep)

    return _make(out, (a,), _bw)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b broadcast across rows."""
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise DimensionError(f"linear: input shape {x.data.shape} vs weight {w.data.shape}")
    out = x.data @ w.data + b.data

    def _bw(g, grads):
        _chain(grads, x, g @ w.data.T)
        _chain(grads, w, x.data.T @ g)
        _chain(grads, b, g.sum(axis=0))

    return _make(out, (x, w, b), _bw)


def lstm_cell(
    x: Tensor, h_prev: Tensor, c_prev: Tensor, wx: Tensor, wh: Tensor, b: Tensor
) -> tuple[Tensor, Tensor]:
    """One LSTM cell step on a batch of rows.

    Gate layout along the last axis of ``wx``/``wh``/``b`` is
    [input, forget, cell-candidate, output], each of width H.
    Returns (h_next, c_next); both share the cached forward values, so
    gradients may flow in through either output or both.
    """
    hdim = h_prev.data.shape[1]
    if wx.data.shape[1] != 4 * hdim or wh.data.shape != (hdim, 4 * hdim):
        raise DimensionError(
            f"lstm_cell: hidden {hdim} vs wx {wx.data.shape}, wh {wh.data.shape}"
        )
    if x.data.shape[1] != wx.data.shape[0]:
        raise DimensionError(f"lstm_cell: input {x.data.shape} vs wx {wx.data.shape}")
    z = x.data @ wx.data + h_prev.data @ wh.data + b.data
    zi, zf, zg, zo = np.split(z, 4, axis=1)
    gi = _sigmoid(zi)
    gf = _sigmoid(zf)
    gg = np.tanh(zg)
    go = _sigmoid(zo)
    c_new = gf * c_prev.data + gi * gg
    tc = np.tanh(c_new)
    h_new = go * tc

    parents = (x, h_prev, c_prev, wx, wh, b)

    def _propagate(dh, dc_ext, grads):
        dc = dc_ext + dh * go * (1.0 - tc * tc)
        dzo = dh * tc * go * (1.0 - go)
        dzf = dc * c_prev.data * gf * (1.0 - gf)
        dzi = dc * gg * gi * (1.0 - gi)
        dzg = dc * gi * (1.0 - gg * gg)
        dz = np.concatenate([dzi, dzf, dzg, dzo], axis=1)
        _chain(grads, x, dz @ wx.data.T)
        _chain(grads, h_prev, dz @ wh.data.T)
        _chain(grads, c_prev, dc * gf)
        _chain(grads, wx, x.data.T @ dz)
        _chain(grads, wh, h_prev.data.T @ dz)
        _chain(grads, b, dz.sum(axis=0))

    def _bw_h(g, grads):
        _propagate(g, np.zeros_like(c_new), grads)

    def _bw_c(g, grads):
        _propagate(np.zeros_like(h_new), g, grads)

    return _make(h_new, parents, _bw_h), _make(c_new, parents, _bw_c)


def bilinear_rowwise(a: Tensor, u: Tensor, b: Tensor) -> Tensor:
    """Row-wise bilinear form a_p^T U b_p; returns a column vector."""
    if a.data.shape != b.data.shape or u.data.shape != (a.data.shape[1],) * 2:
        raise DimensionError(
            f"bilinear: a {a.data.shape}, U {u.data.shape}, b {b.data.shape}"
        )
    au = a.data @ u.data
    out = (au * b.data).sum(axis=1, keepdims=True)

    def _bw(g, grads):
        _chain(grads, a, g * (b.data @ u.data.T))
        _chain(grads, b, g * au)
        _chain(grads, u, a.data.T @ (g * b.data))

    return _make(out, (a, u, b), _bw)


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Elementwise binary cross-entropy on logits, numerically stable."""
    z = logits.data
    y = targets.data
    out = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))

    def _bw(g, grads):
        _chain(grads, logits, g * (_sigmoid(z) - y))

    return _make(out, (logits, targets), _bw)


def shift_up_zero(v: Tensor) -> Tensor:
    """out[t] = v[t+1] with a zero final row; bootstrap values V(s')."""
    out = np.zeros_like(v.data)
    out[:-1] = v.data[1:]

    def _bw(g, grads):
        gv = np.zeros_like(v.data)
        gv[1:] = g[:-1]
        _chain(grads, v, gv)

    return _make(out, (v,), _bw)
