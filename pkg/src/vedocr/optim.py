"""Adam with bias correction and a warmup-free cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class OptimError(ValueError):
    pass


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """``base_lr * (1 + cos(pi * step / total_steps)) / 2``, decaying to 0 at ``total_steps``."""
    if step < 0 or step > total_steps:
        raise OptimError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return base_lr
    return max(0.0, base_lr * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


class Adam:
    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState(
            {k: np.zeros_like(p.data) for k, p in params.items()},
            {k: np.zeros_like(p.data) for k, p in params.items()},
        )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float, grads: dict[str, np.ndarray] | None = None) -> None:
        """One bias-corrected update using ``grads`` (default: each parameter's ``.grad``)."""
        if lr < 0:
            raise OptimError("learning rate must be non-negative")
        st = self.state
        st.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**st.t
        c2 = 1.0 - b2**st.t
        for name, p in self.params.items():
            g = p.grad if grads is None else grads[name]
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.shape:
                raise OptimError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            m = st.m[name]
            v = st.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.dtype)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Functional form of :meth:`Adam.step`; mutates ``params`` and ``state`` in place and returns the state."""
    opt = Adam.__new__(Adam)
    opt.params, opt.beta1, opt.beta2, opt.eps = params, beta1, beta2, eps
    for k, p in params.items():
        state.m.setdefault(k, np.zeros_like(p.data))
        state.v.setdefault(k, np.zeros_like(p.data))
    opt.state = state
    opt.step(lr, grads)
    return state
