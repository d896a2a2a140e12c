"""Adam, gradient clipping, and seeded random generators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RNG_ALGORITHM = "PCG64"


def make_rng(seed):
    """Deterministic generator: identical seeds give identical draw sequences."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class Adam:
    """Adam with bias correction over a fixed list of parameter tensors."""

    params: list
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.state = AdamState(
            first_moment=[np.zeros_like(p.data) for p in self.params],
            second_moment=[np.zeros_like(p.data) for p in self.params],
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
        )

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr):
        missing = [p.name or i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise ValueError(f"parameters without gradient: {missing}")
        s = self.state
        s.step_count += 1
        t = s.step_count
        corr1 = 1.0 - s.beta1 ** t
        corr2 = 1.0 - s.beta2 ** t
        for p, m, v in zip(self.params, s.first_moment, s.second_moment):
            g = p.grad
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * g * g
            p.data -= lr * (m / corr1) / (np.sqrt(v / corr2) + s.epsilon)


def clip_gradients(params, lo=-1.0, hi=1.0):
    """Clamp every populated gradient elementwise into [lo, hi], in place."""
    if lo > hi:
        raise ValueError(f"clip range is empty: lo={lo} > hi={hi}")
    grads = []
    for p in params:
        if p.grad is not None:
            np.clip(p.grad, lo, hi, out=p.grad)
        grads.append(p.grad)
    return grads
