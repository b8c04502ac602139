"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op accepts an optional leading batch axis where it makes sense; that
is the only broadcasting supported (e.g. a bias of shape ``(C,)`` added to
``(N, C)``).
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = ""):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self.op!r})"

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Forward-only evaluation: nothing is recorded for backward."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn) -> Tensor:
    tracked = _GRAD_ENABLED and any(_needs_grad(p) for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out.op = op
    if tracked:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _accumulate(t: Tensor, g: np.ndarray, slot: dict) -> None:
    if not _needs_grad(t):
        return
    key = id(t)
    if key in slot:
        slot[key] = slot[key] + g
    else:
        slot[key] = g


class Tape:
    """Operations reachable from an output, in topological (forward) order."""

    def __init__(self, output: Tensor):
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        # iterative DFS; graphs from deep training loops overflow recursion
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in reversed(node._parents):
                if id(p) not in seen and _needs_grad(p):
                    stack.append((p, False))

    def __len__(self) -> int:
        return len(self.nodes)


def backward(output: Tensor) -> None:
    if output.size != 1:
        raise ShapeError(f"backward() needs a single-element output, got shape {output.shape}")
    tape = Tape(output)
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = node.grad + g
        if node._backward is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is not None:
                    _accumulate(parent, pg, grads)


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _batch_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if a.data.ndim == b.data.ndim + 1 and a.shape[1:] == b.shape:
        return
    if b.data.ndim == a.data.ndim + 1 and b.shape[1:] == a.shape:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform (only a leading batch axis broadcasts)")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    _batch_broadcast(a, b, "add")
    return _make(
        a.data + b.data, (a, b), "add",
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _batch_broadcast(a, b, "sub")
    return _make(
        a.data - b.data, (a, b), "sub",
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _batch_broadcast(a, b, "mul")
    return _make(
        a.data * b.data, (a, b), "mul",
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _batch_broadcast(a, b, "div")
    out = a.data / b.data
    return _make(
        out, (a, b), "div",
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), "scale", lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make(a.data + c, (a,), "add_scalar", lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``(..., n, k) @ (k, m)`` or ``(n, k) @ (k, m)``; ``b`` is never batched."""
    if b.data.ndim != 2 or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def bw(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make(a.data @ b.data, (a, b), "matmul", bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), "relu", lambda g: (g * mask,))


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)  # subgradient 0 at 0
    return _make(np.abs(a.data), (a,), "abs", lambda g: (g * sign,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), "exp", lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), "sqrt", lambda g: (g * 0.5 / np.where(out > 0, out, np.inf),))


def sum_(a: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (a,), "sum", bw)


def mean(a: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(sum_(a, axis), 1.0 / n)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    return _make(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def flip(a: Tensor, axis: int) -> Tensor:
    return _make(np.flip(a.data, axis).copy(), (a,), "flip", lambda g: (np.flip(g, axis).copy(),))


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty list")
    nd = tensors[0].data.ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.data.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors)))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), "concat", bw)


def split(a: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    bounds = np.cumsum([0] + list(sizes))
    if bounds[-1] != a.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not sum to extent {a.shape[axis]}")
    return [index_range(a, int(bounds[i]), int(bounds[i + 1]), axis) for i in range(len(sizes))]


def index_range(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    ax = axis % a.data.ndim
    sl = [slice(None)] * a.data.ndim
    sl[ax] = slice(start, stop)
    sl = tuple(sl)

    def bw(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        return (full,)

    return _make(a.data[sl].copy(), (a,), "index_range", bw)


def take(a: Tensor, index: np.ndarray, axis: int = 0) -> Tensor:
    """Gather along an axis (used to pick batch members)."""
    index = np.asarray(index)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (slice(None),) * (axis % a.data.ndim) + (index,), g)
        return (full,)

    return _make(np.take(a.data, index, axis=axis), (a,), "take", bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    return _make(out, (a,), "log_softmax", lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


# --- convolution and pooling -------------------------------------------------

def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected C×H×W or N×C×H×W, got {x.shape}")


def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    # x: N×C×Hp×Wp -> N×(C·k·k)×(Ho·Wo), contiguous
    n, c, hp, wp = x.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    s = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(n, c, k, k, ho, wo),
        strides=(s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride),
        writeable=False,
    )
    return view.reshape(n, c * k * k, ho * wo)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int | str = 0) -> Tensor:
    """2D cross-correlation (no kernel flip) with zero padding."""
    xd, squeeze = _as_batch(x.data)
    if w.data.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: weight must be C_out×C_in×k×k, got {w.shape}")
    c_out, c_in, k, _ = w.shape
    if xd.shape[1] != c_in:
        raise ShapeError(f"conv2d: input {x.shape} has {xd.shape[1]} channels, weight {w.shape} expects {c_in}")
    if k % 2 == 0:
        raise ShapeError(f"conv2d: kernel extent must be odd, got {k}")
    if b is not None and b.shape != (c_out,):
        raise ShapeError(f"conv2d: bias {b.shape} does not match {c_out} output channels")
    p = (k - 1) // 2 if padding == "same" else int(padding)
    n, _, h, wd = xd.shape
    if h + 2 * p < k or wd + 2 * p < k:
        raise ShapeError(f"conv2d: input {x.shape} smaller than kernel {k} after padding {p}")
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else np.ascontiguousarray(xd)
    ho = (h + 2 * p - k) // stride + 1
    wo = (wd + 2 * p - k) // stride + 1
    w2 = w.data.reshape(c_out, c_in * k * k)
    if k == 1 and stride == 1:
        cols = xp.reshape(n, c_in, ho * wo)
    else:
        cols = _im2col(xp, k, stride)
    out = np.matmul(w2, cols)
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(n, c_out, ho, wo)

    need_x = _needs_grad(x)

    def bw(g):
        gb = (g if not squeeze else g[None]).reshape(n, c_out, ho * wo)
        gw = np.matmul(gb, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        gx = _conv2d_input_grad(gb, w.data, xp.shape, k, stride, p, ho, wo) if need_x else None
        if gx is not None:
            gx = gx[:, :, p:p + h, p:p + wd] if p else gx
            if squeeze:
                gx = gx[0]
        if b is None:
            return gx, gw
        return gx, gw, gb.sum(axis=(0, 2))

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out[0] if squeeze else out, parents, "conv2d", bw)


def _conv2d_input_grad(gb, w, xp_shape, k, stride, p, ho, wo):
    """Gradient w.r.t. the padded input, shape ``xp_shape``."""
    n, c_in = xp_shape[:2]
    c_out = w.shape[0]
    if k == 1 and stride == 1:
        return np.matmul(w.reshape(c_out, c_in).T, gb).reshape(xp_shape)
    if stride == 1:
        # full correlation of the output gradient with the rotated, transposed kernel
        wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)).reshape(c_in, c_out * k * k)
        gpad = np.pad(gb.reshape(n, c_out, ho, wo), ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
        return np.matmul(wf, _im2col(gpad, k, 1)).reshape(xp_shape)
    gcols = np.matmul(w.reshape(c_out, -1).T, gb).reshape(n, c_in, k, k, ho, wo)
    gxp = np.zeros(xp_shape)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
    return gxp


def pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages input window [floor(i*n_in/n_out), ceil((i+1)*n_in/n_out))."""
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"adaptive_avg_pool2d: output extents must be positive, got {out_h}×{out_w}")
    h, w = x.shape[-2:]
    if out_h > h or out_w > w:
        raise ShapeError(f"adaptive_avg_pool2d: output {out_h}×{out_w} exceeds input {h}×{w}")
    ph = pool_matrix(h, out_h)
    pw = pool_matrix(w, out_w)
    out = np.einsum("ih,...hw,jw->...ij", ph, x.data, pw, optimize=True)
    return _make(out, (x,), "adaptive_avg_pool2d",
                 lambda g: (np.einsum("ih,...ij,jw->...hw", ph, g, pw, optimize=True),))


def mean_abs_per_channel(a: Tensor, b: Tensor) -> Tensor:
    """Per-channel mean of |a - b| over the two trailing spatial axes."""
    _check_same(a, b, "mean_abs_per_channel")
    if a.data.ndim < 3:
        raise ShapeError(f"mean_abs_per_channel: expected C×H×W maps, got {a.shape}")
    return mean(abs_(sub(a, b)), axis=(-2, -1))


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)
