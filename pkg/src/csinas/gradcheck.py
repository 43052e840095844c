"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor


def numeric_grad(
    loss_fn: Callable[[], Tensor],
    param: Tensor,
    eps: float = 1e-5,
    coords: np.ndarray | None = None,
) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. ``param`` at ``coords``
    (flat indices; all entries when None). Unchecked entries are left at 0."""
    flat = param.data.reshape(-1)
    out = np.zeros_like(flat)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        up = float(loss_fn().data)
        flat[i] = orig - eps
        down = float(loss_fn().data)
        flat[i] = orig
        out[i] = (up - down) / (2 * eps)
    return out.reshape(param.shape)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max over checked coordinates of |analytic - numeric| / max(1, |numeric|).

    ``loss_fn`` must rebuild the graph on every call and be deterministic.
    ``max_coords`` samples that many coordinates per parameter (all when None).
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p, a in zip(params, analytic):
        coords = None
        if max_coords is not None and p.size > max_coords:
            coords = rng.choice(p.size, size=max_coords, replace=False)
        num = numeric_grad(loss_fn, p, eps, coords)
        sel = slice(None) if coords is None else coords
        a_flat, n_flat = a.reshape(-1)[sel], num.reshape(-1)[sel]
        err = np.abs(a_flat - n_flat) / np.maximum(1.0, np.abs(n_flat))
        if err.size:
            worst = max(worst, float(err.max()))
    for p in params:
        p.grad = None
    return worst
