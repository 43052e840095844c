"""Parameter containers: a minimal Module, convolution and dense layers."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Walks attributes to collect parameters in a stable (definition) order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for k, p in own.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: stored shape {state[k].shape} vs {p.shape}")
            p.data[...] = state[k]


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Conv2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: tuple[int, int],
        rng: np.random.Generator,
        dilation: int = 1,
        depthwise: bool = False,
        bias: bool = True,
    ):
        kh, kw = kernel
        if depthwise and c_in != c_out:
            raise ValueError("depthwise conv needs c_in == c_out")
        self.c_in, self.c_out, self.kernel = c_in, c_out, (kh, kw)
        self.dilation, self.depthwise = dilation, depthwise
        fan_in = kh * kw * (1 if depthwise else c_in)
        self.weight = _uniform(rng, (c_out, 1 if depthwise else c_in, kh, kw), fan_in)
        self.bias = _uniform(rng, (c_out,), fan_in) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv2d(x, self.weight, self.bias, dilation=self.dilation, depthwise=self.depthwise)

    def flops(self, h: int, w: int) -> int:
        # 2 * MACs, biases not counted
        kh, kw = self.kernel
        per_group_in = 1 if self.depthwise else self.c_in
        return 2 * kh * kw * per_group_in * self.c_out * h * w


class Dense(Module):
    """y = x @ W + b for x of shape (batch, n_in)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = _uniform(rng, (n_in, n_out), n_in)
        self.bias = _uniform(rng, (n_out,), n_in)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.add(ag.matmul(x, self.weight), self.bias)
