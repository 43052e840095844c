"""Small dense-tensor engine with reverse-mode differentiation.

Tensors wrap float64 numpy arrays. Every differentiable op records its
parents and a backward closure on the output; ``Tensor.backward`` walks the
recorded graph in reverse topological order, populates ``.grad`` on leaf
tensors that require it, and then releases the graph so the same loss cannot
be differentiated twice.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "GraphError",
    "no_grad",
    "tensor",
    "zeros",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "relu",
    "sigmoid",
    "sum",
    "mean",
    "reshape",
    "concat",
    "take_channels",
    "softmax",
    "weighted_sum",
    "conv2d",
    "mse",
    "sq_norm",
]

DTYPE = np.float64

_state = threading.local()


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes."""


class GraphError(RuntimeError):
    """Raised for invalid backward calls."""


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (per thread)."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_released")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim > 4:
            raise ShapeError(f"tensors have at most 4 dims, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._released = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    __add__ = lambda self, other: add(self, _wrap(other))
    __radd__ = lambda self, other: add(_wrap(other), self)
    __sub__ = lambda self, other: sub(self, _wrap(other))
    __rsub__ = lambda self, other: sub(_wrap(other), self)
    __mul__ = lambda self, other: mul(self, _wrap(other))
    __rmul__ = lambda self, other: mul(_wrap(other), self)
    __matmul__ = lambda self, other: matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def backward(self) -> None:
        """Populate ``.grad`` of every reachable leaf with d(self)/d(leaf)."""
        if self._released:
            raise GraphError("backward called twice on the same graph; run a new forward pass")
        if self.data.ndim != 0 and self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("loss does not depend on any tensor that requires grad")

        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node._released = True


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad)


# ---------------------------------------------------------------- element-wise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar constant."""
    return _make(a.data * s, (a,), lambda g: (g * s,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    y = np.empty_like(a.data)
    pos = a.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    y[~pos] = e / (1.0 + e)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


# ---------------------------------------------------------------- reductions / shape


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    ref = parts[0].shape
    for p in parts[1:]:
        if p.data.ndim != len(ref) or any(
            p.shape[i] != ref[i] for i in range(len(ref)) if i != axis
        ):
            raise ShapeError(f"concat: shapes {[q.shape for q in parts]} differ off axis {axis}")
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return np.split(g, bounds, axis=axis)

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def take_channels(a: Tensor, index) -> Tensor:
    """Gather along axis 1 (channels); ``index`` may repeat or drop channels."""
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= a.shape[1]):
        raise ShapeError(f"take_channels: index out of range for {a.shape[1]} channels")

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, (slice(None), index), g)
        return (out,)

    return _make(a.data[:, index], (a,), backward)


def index(a: Tensor, i: int) -> Tensor:
    """Pick element ``i`` of a 1-D tensor as a 0-d tensor."""
    if a.data.ndim != 1:
        raise ShapeError(f"index: expected 1-D tensor, got {a.shape}")

    def backward(g):
        out = np.zeros_like(a.data)
        out[i] = g
        return (out,)

    return _make(np.asarray(a.data[i]), (a,), backward)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree for {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax of a 1-D tensor."""
    if a.data.ndim != 1:
        raise ShapeError(f"softmax: expected 1-D tensor, got {a.shape}")
    z = np.exp(a.data - a.data.max())
    y = z / z.sum()

    def backward(g):
        return (y * (g - np.dot(g, y)),)

    return _make(y, (a,), backward)


def weighted_sum(parts: Sequence[Tensor], weights: Tensor) -> Tensor:
    """Return sum_i weights[i] * parts[i] for a 1-D ``weights`` tensor."""
    if weights.data.ndim != 1 or weights.shape[0] != len(parts):
        raise ShapeError(f"weighted_sum: {len(parts)} parts but weights {weights.shape}")
    ref = parts[0].shape
    for p in parts:
        if p.shape != ref:
            raise ShapeError(f"weighted_sum: part shapes differ {[q.shape for q in parts]}")
    w = weights.data
    out = np.zeros(ref, dtype=DTYPE)
    for wi, p in zip(w, parts):
        out += wi * p.data

    def backward(g):
        gw = np.array([np.vdot(g, p.data) for p in parts])
        return [g * wi for wi in w] + [gw]

    return _make(out, (*parts, weights), backward)


# ---------------------------------------------------------------- convolution


def _im2col(x: np.ndarray, kh: int, kw: int, d: int) -> np.ndarray:
    """(b, c, h, w) -> (c, kh*kw, b*h*w) columns for a stride-1 same conv."""
    b, c, h, w = x.shape
    ph, pw = d * (kh - 1) // 2, d * (kw - 1) // 2
    xt = x.transpose(1, 0, 2, 3)
    if kh == 1 and kw == 1:
        return np.ascontiguousarray(xt).reshape(c, 1, b * h * w)
    xp = np.pad(xt, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((c, kh, kw, b, h, w), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i * d : i * d + h, j * d : j * d + w]
    return cols.reshape(c, kh * kw, b * h * w)


def _conv_fwd(x: np.ndarray, w: np.ndarray, d: int, depthwise: bool):
    b, _, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    cols = _im2col(x, kh, kw, d)
    if depthwise:
        out = np.matmul(w.reshape(c_out, 1, kh * kw), cols)
    else:
        out = w.reshape(c_out, -1) @ cols.reshape(-1, cols.shape[2])
    return out.reshape(c_out, b, h, wd).transpose(1, 0, 2, 3), cols


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    dilation: int = 1,
    depthwise: bool = False,
) -> Tensor:
    """Stride-1 'same' convolution of an NCHW tensor.

    ``weight`` is (c_out, c_in, kh, kw), or (c, 1, kh, kw) when ``depthwise``.
    Kernel sides must be odd so the zero padding is symmetric.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and kernel, got {x.shape}, {weight.shape}")
    c_out, c_in_w, kh, kw = weight.shape
    c_in = x.shape[1]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} must have odd sides")
    if depthwise:
        if c_in_w != 1 or c_out != c_in:
            raise ShapeError(f"conv2d(depthwise): kernel {weight.shape} vs input channels {c_in}")
    elif c_in_w != c_in:
        raise ShapeError(f"conv2d: kernel expects {c_in_w} input channels, input has {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias {bias.shape} vs {c_out} output channels")

    wd, d = weight.data, dilation
    out, cols = _conv_fwd(x.data, wd, d, depthwise)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            # same conv with the spatially flipped (and, if full, transposed) kernel
            flipped = wd[:, :, ::-1, ::-1]
            if not depthwise:
                flipped = flipped.transpose(1, 0, 2, 3)
            gx, _ = _conv_fwd(g, np.ascontiguousarray(flipped), d, depthwise)
        if weight.requires_grad:
            gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(c_out, -1)
            if depthwise:
                gw = np.matmul(gt[:, None, :], cols.transpose(0, 2, 1)).reshape(wd.shape)
            else:
                gw = (gt @ cols.reshape(-1, cols.shape[2]).T).reshape(wd.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


# ---------------------------------------------------------------- losses


def sq_norm(a: Tensor) -> Tensor:
    """Sum of squares."""
    return _make(np.asarray(np.vdot(a.data, a.data)), (a,), lambda g: (2.0 * g * a.data,))


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Batch mean of per-sample squared error norms: (1/B) sum_b ||pred_b - target_b||^2."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = pred.shape[0] if pred.data.ndim else 1
    val = np.asarray(np.vdot(diff, diff) / n)

    def backward(g):
        gp = (2.0 * g / n) * diff
        return gp, -gp

    return _make(val, (pred, target), backward)
