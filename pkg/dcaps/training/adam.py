"""Adam with bias correction (lr 1e-3, β1 0.9, β2 0.999, ε 1e-8)."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from dcaps.core.errors import DimensionError, NumericalError
from dcaps.numerics.tensor import Parameter


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray] | None,
              state: AdamState) -> AdamState:
    """Update ``params`` in place and advance ``state.step`` by one.

    ``grads`` defaults to each parameter's accumulated ``.grad``. Every
    gradient is checked before anything is updated.

    :raises NumericalError: naming the first parameter with a non-finite gradient.
    """
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params):
        raise DimensionError(f"{len(grads)} gradients for {len(params)} parameters")
    for p, g in zip(params, grads, strict=True):
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {p.name} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {p.name}")

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for p, g in zip(params, grads, strict=True):
        m = state.first.get(p.name)
        v = state.second.get(p.name)
        if m is None:
            m = np.zeros(p.shape, dtype=np.float64)
            v = np.zeros(p.shape, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.first[p.name] = m
        state.second[p.name] = v
        if state.lr == 0.0:
            continue
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        p.assign(p.value.data - update.astype(p.value.dtype))
    return state
