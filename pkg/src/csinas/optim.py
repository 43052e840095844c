"""Adam with per-epoch exponential learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autograd import ShapeError, Tensor

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class OptimizerState:
    base_lr: float
    decay_rate: float = 1.0
    epoch: int = 0
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @property
    def lr(self) -> float:
        return self.base_lr * self.decay_rate**self.epoch


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: OptimizerState) -> OptimizerState:
    """One bias-corrected Adam update, in place on ``params``.

    A missing gradient counts as zero, so that parameter's moments still decay.
    """
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ShapeError(f"optimizer tracks {len(state.m)} parameters, got {len(params)}")
    state.step += 1
    t = state.step
    lr = state.lr
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.data.shape:
            raise ShapeError(f"moment buffer {m.shape} does not match parameter {p.shape}")
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ShapeError(f"gradient {g.shape} does not match parameter {p.shape}")
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + EPS)
    return state


class Adam:
    """Adam over a fixed parameter list; call ``set_epoch`` at epoch boundaries."""

    def __init__(self, params: Sequence[Tensor], lr: float, decay_rate: float = 1.0):
        self.params = list(params)
        self.state = OptimizerState(base_lr=lr, decay_rate=decay_rate)

    @property
    def lr(self) -> float:
        return self.state.lr

    def set_epoch(self, epoch: int) -> None:
        self.state.epoch = epoch

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)
