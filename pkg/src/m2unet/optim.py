"""Adam with bias correction and the cosine learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor
from .errors import UsageError


def cosine_lr(step, total_steps, lr_max, lr_min=0.0):
    """Half-cosine decay from lr_max at step 0 to lr_min at total_steps."""
    if total_steps < 1:
        raise UsageError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise UsageError(f"step {step} outside [0, {total_steps}]")
    if lr_min > lr_max:
        raise UsageError(f"lr_min {lr_min} exceeds lr_max {lr_max}")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * step / total_steps))


@dataclass
class OptimState:
    """Per-parameter first/second moments plus the shared step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update over a named parameter dict.

    ``params`` maps name -> Tensor and is updated in place (the optimizer
    owns parameters between steps); ``grads`` maps name -> Tensor or array.
    Missing moment buffers are created on first use.  Returns
    ``(params, state)`` for call-site chaining.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise UsageError(f"no gradient supplied for parameter {name!r}")
        g = g.data if isinstance(g, Tensor) else np.asarray(g)
        if g.shape != p.data.shape:
            raise UsageError(f"gradient shape {g.shape} does not match "
                             f"parameter {name!r} shape {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype)
    return params, state
