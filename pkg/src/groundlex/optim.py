"""AdamW with decoupled weight decay, and the linear-warmup + cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


@dataclass
class AdamWState:
    """Per-parameter moment buffers plus the optimizer hyperparameters."""

    learning_rate: float = 1e-4
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], state: AdamWState,
               lr: float | None = None) -> AdamWState:
    """One AdamW update in place, reading gradients from ``param.grad``.

    Weight decay is decoupled: parameters shrink by (1 - lr*wd) independently
    of the moment-based step. With lr == 0 the update is the identity on both
    parameters and moments; only step_count advances.
    """
    if lr is None:
        lr = state.learning_rate
    if lr < 0.0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    state.step_count += 1
    if lr == 0.0:
        return state
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise ShapeError("adamw_step", p.shape)
        if g.shape != p.data.shape:
            raise ShapeError("adamw_step", p.shape, g.shape)
        m = state.first_moment.setdefault(name, np.zeros_like(p.data))
        v = state.second_moment.setdefault(name, np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if state.weight_decay:
            p.data *= 1.0 - lr * state.weight_decay
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return state


@dataclass(frozen=True)
class LRSchedule:
    """Linear warmup to ``peak_lr``, then cosine annealing to zero."""

    peak_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be positive")
        if self.total_steps < self.warmup_steps:
            raise ValueError("total_steps must be >= warmup_steps")


def lr_at(schedule: LRSchedule, step: int) -> float:
    """Learning rate at `step`; steps past total_steps clamp to the final value
    (runs can stop early or overshoot bookkeeping by a step)."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step < schedule.warmup_steps:
        return schedule.peak_lr * step / schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    if span == 0:
        return schedule.peak_lr
    progress = min(step - schedule.warmup_steps, span) / span
    return schedule.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
