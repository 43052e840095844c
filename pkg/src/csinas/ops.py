"""The eight searchable cell operators, with FLOPs and parameter accounting.

Composite operators carry a single bias, on their last convolution; a bias on
an inner linear stage would fold into it.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .nn import Conv2d, Module

# Order is part of the contract: genotype derivation breaks ties by it.
OP_NAMES: tuple[str, ...] = (
    "zero",
    "skip_connection",
    "sep_conv3x3",
    "dil_conv3x3",
    "dil_conv5x5",
    "conv3x3",
    "conv1x5_5x1",
    "conv1x9_9x1",
)
PARAMETER_FREE = frozenset({"zero", "skip_connection"})

# kind -> list of (kh, kw, dilation, depthwise, bias)
_LAYERS: dict[str, list[tuple[int, int, int, bool, bool]]] = {
    "zero": [],
    "skip_connection": [],
    "sep_conv3x3": [(3, 3, 1, True, False), (1, 1, 1, False, True)],
    "dil_conv3x3": [(3, 3, 2, True, False), (1, 1, 1, False, True)],
    "dil_conv5x5": [(5, 5, 2, True, False), (1, 1, 1, False, True)],
    "conv3x3": [(3, 3, 1, False, True)],
    "conv1x5_5x1": [(1, 5, 1, False, False), (5, 1, 1, False, True)],
    "conv1x9_9x1": [(1, 9, 1, False, False), (9, 1, 1, False, True)],
}


def op_index(name: str) -> int:
    try:
        return OP_NAMES.index(name)
    except ValueError:
        raise ValueError(f"unknown operator {name!r}; expected one of {OP_NAMES}") from None


def validate_op_set(names) -> tuple[str, ...]:
    """Return ``names`` as a tuple in canonical order, rejecting unknown or repeated names."""
    names = tuple(names)
    if len(set(names)) != len(names):
        raise ValueError(f"repeated operator in op set {names}")
    for n in names:
        op_index(n)
    return tuple(sorted(names, key=op_index))


class Operator(Module):
    def __init__(self, kind: str, channels: int, rng: np.random.Generator, relu: bool = True):
        op_index(kind)
        if channels < 1:
            raise ValueError(f"channels must be positive, got {channels}")
        self.kind = kind
        self.channels = channels
        self.relu = relu and kind not in PARAMETER_FREE
        self.layers = [
            Conv2d(channels, channels, (kh, kw), rng, dilation=d, depthwise=dw, bias=b)
            for kh, kw, d, dw, b in _LAYERS[kind]
        ]

    def linear(self, x: Tensor) -> Tensor:
        """Operator output before the trailing ReLU."""
        if x.data.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"{self.kind}: expected (b, {self.channels}, h, w) input, got {x.shape}")
        if self.kind == "zero":
            return ag.scale(x, 0.0)
        for layer in self.layers:
            x = layer(x)
        return x

    def __call__(self, x: Tensor) -> Tensor:
        y = self.linear(x)
        return ag.relu(y) if self.relu else y


def apply(op: Operator, x: Tensor) -> Tensor:
    return op(x)


def op_flops(kind: str, c: int, h: int, w: int) -> int:
    """2 * multiply-accumulates over the operator's convolutions; biases excluded."""
    total = 0
    for kh, kw, _, dw, _ in _LAYERS[kind]:
        total += 2 * kh * kw * (1 if dw else c) * c * h * w
    return total


def op_param_count(kind: str, c: int) -> int:
    total = 0
    for kh, kw, _, dw, b in _LAYERS[kind]:
        total += kh * kw * (1 if dw else c) * c + (c if b else 0)
    return total


def check_operator(
    kind: str,
    shape: tuple[int, int, int, int],
    rng: np.random.Generator,
    eps: float = 1e-5,
    relu: bool = True,
    margin: float = 1e-3,
) -> float:
    """Gradient check of one random operator instance on a random input.

    Inputs whose pre-activations fall within ``margin`` of the ReLU kink are
    resampled.
    """
    from .gradcheck import grad_check

    op = Operator(kind, shape[1], rng, relu=relu)
    for _ in range(100):
        x = Tensor(rng.standard_normal(shape), requires_grad=True)
        with ag.no_grad():
            pre = op.linear(x).data
        if not op.relu or np.abs(pre).min() > margin:
            break
    target = Tensor(rng.standard_normal(shape))
    loss_fn: Callable[[], Tensor] = lambda: ag.mse(op(x), target)
    return grad_check(loss_fn, [x, *op.parameters()], eps=eps)
