"""
Adam with bias correction over a list of parameter tensors.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from utils.errors import ConfigurationError, DimensionError
from utils.tensor import Tensor

logger = logging.getLogger("tensor_core")


@dataclass
class AdamState:
    """First/second moment buffers, one pair per parameter, plus the step count."""
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        return cls(beta1=beta1, beta2=beta2, eps=eps,
                   m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params])


def adam_step(params: Sequence[Tensor], state: AdamState, lr: float):
    """
    Apply one Adam update in place using the gradients left by `backward`.

    Args:
        params: Tensors with requires_grad, in a fixed order
        state: Moment buffers matching `params`
        lr: Step size, must be positive
    """
    if not lr > 0.0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise DimensionError(f"optimizer holds {len(state.m)} buffers for {len(params)} parameters")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t

    for param, m, v in zip(params, state.m, state.v):
        g = param.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        param.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def zero_grad(params: Sequence[Tensor]):
    for param in params:
        param.zero_grad()
