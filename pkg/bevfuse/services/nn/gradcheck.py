from typing import Callable, List, Sequence

import numpy as np

from bevfuse.services.nn.tensor import Tensor

# Central-difference step
GRAD_CHECK_EPS = 1e-4
# Denominator floor of the relative error
GRAD_CHECK_FLOOR = 1e-8


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRAD_CHECK_FLOOR)


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    seed: int = 0,
    eps: float = GRAD_CHECK_EPS,
) -> float:
    """Largest relative error between backward() and central differences.

    The output is reduced to a scalar by a fixed random projection so
    every output element contributes.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor.param(a.copy()) for a in arrays]
    out = fn(*tensors)
    projection = np.random.default_rng(seed).standard_normal(out.shape)
    (out * Tensor(projection)).sum().backward()
    analytic: List[np.ndarray] = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def objective(values: List[np.ndarray]) -> float:
        return float((fn(*[Tensor(v) for v in values]).data * projection).sum())

    worst = 0.0
    for k, base in enumerate(arrays):
        numeric = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[k][idx] += eps
            minus[k][idx] -= eps
            numeric[idx] = (objective(plus) - objective(minus)) / (2.0 * eps)
        if base.size:
            worst = max(worst, float(relative_error(analytic[k], numeric).max()))
    return worst
