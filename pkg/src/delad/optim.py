"""RMSprop and a step-wise learning-rate schedule."""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float = 0.05
    milestones: tuple = (1000, 1500)
    decay: float = 0.2

    def __post_init__(self):
        ms = tuple(int(m) for m in self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing: {ms}")
        if not 0 < self.decay < 1:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        object.__setattr__(self, "milestones", ms)


def lr_at_epoch(sched: LrSchedule, epoch: int) -> float:
    """Learning rate after every milestone <= ``epoch`` has applied its decay."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    passed = bisect.bisect_right(sched.milestones, epoch)
    return sched.initial_lr * sched.decay ** passed


@dataclass
class RmspropState:
    v: np.ndarray
    rho: float = 0.99
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param, rho=0.99, eps=1e-8):
        return cls(np.zeros_like(param, dtype=np.float64), rho, eps)


def rmsprop_step(param, grad, state: RmspropState, lr):
    """One in-place RMSprop update; returns ``param`` for convenience.

    v <- rho v + (1 - rho) g^2 ;  theta <- theta - lr g / (sqrt(v) + eps)
    """
    if param.shape != grad.shape or state.v.shape != param.shape:
        raise ValueError(f"shape mismatch: param {param.shape}, grad {grad.shape}, "
                         f"state {state.v.shape}")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    state.v *= state.rho
    state.v += (1 - state.rho) * grad * grad
    param -= lr * grad / (np.sqrt(state.v) + state.eps)
    return param


@dataclass
class RMSprop:
    """RMSprop over a dict of named parameter arrays (updated in place)."""

    params: dict
    rho: float = 0.99
    eps: float = 1e-8
    state: dict = field(init=False)

    def __post_init__(self):
        self.state = {k: RmspropState.zeros_like(p, self.rho, self.eps)
                      for k, p in self.params.items()}

    def step(self, grads, lr):
        for name, p in self.params.items():
            rmsprop_step(p, grads[name], self.state[name], lr)
