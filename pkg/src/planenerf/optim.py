"""Adam with bias correction.

Moment buffers start at zero and the step count increments by exactly one
per update. beta/eps defaults are the optimizer's canonical values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: Tensor, beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros_like(param.data), v=np.zeros_like(param.data),
                   t=0, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(param: Tensor, grad: np.ndarray, state: AdamState, lr: float) -> None:
    """One Adam update, in place on `param.data` and `state`."""
    if grad.shape != param.data.shape or state.m.shape != param.data.shape:
        raise ValueError(
            f"adam_step shape mismatch: param {param.data.shape}, grad {grad.shape}, m {state.m.shape}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class Adam:
    """Tracks one AdamState per named parameter.

    `lr_for` maps a parameter name to its learning rate so plane/vector
    factors and MLP weights can use different rates, scaled by a shared
    decay multiplier.
    """

    params: dict[str, Tensor]
    lr_by_name: dict[str, float]
    states: dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            if name not in self.states:
                self.states[name] = AdamState.for_param(p)

    def step(self, grads: dict[str, np.ndarray], lr_scale: float = 1.0) -> None:
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            adam_step(p, g, self.states[name], self.lr_by_name[name] * lr_scale)
