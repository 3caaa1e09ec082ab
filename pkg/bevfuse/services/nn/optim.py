from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from bevfuse.errors import NNError
from bevfuse.services.nn.tensor import Tensor


class AdamState(BaseModel):
    """First and second moment estimates plus the step counter"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    step: int = Field(0, ge=0)
    m: List[np.ndarray] = Field(default_factory=list)
    v: List[np.ndarray] = Field(default_factory=list)

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[List[np.ndarray], AdamState]:
    """Bias-corrected Adam update; returns new parameters and state without mutating the inputs"""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise NNError("Adam: parameter, gradient and state lists differ in length")
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise NNError(f"Adam: gradient shape {g.shape} does not match parameter shape {p.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(step=t, m=new_m, v=new_v)


class Adam:
    def __init__(self, params: List[Tensor], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState.zeros_like([p.data for p in params])

    def step(self, lr: Optional[float] = None) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        updated, self.state = adam_step(
            [p.data for p in self.params], grads, self.state, lr or self.lr, self.beta1, self.beta2, self.eps
        )
        for p, data in zip(self.params, updated):
            p.data = data

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
