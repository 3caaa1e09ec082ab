import numpy as np

from bevfuse.errors import NNError
from bevfuse.models.network import LossKind
from bevfuse.services.nn import functional as F
from bevfuse.services.nn.tensor import Tensor

DICE_SMOOTH = 1.0


def _check(logits: Tensor, target: np.ndarray) -> None:
    if logits.shape != target.shape:
        raise NNError(f"loss target shape {target.shape} does not match output shape {logits.shape}")


def categorical_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean over pixels of -sum_k t_k log softmax(z)_k; target is one-hot along axis 1"""
    _check(logits, target)
    pixels = target.size // target.shape[1]
    return (F.log_softmax(logits, axis=1) * Tensor(target)).sum() * (-1.0 / pixels)


def binary_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Per-channel sigmoid cross-entropy, mean over all elements"""
    _check(logits, target)
    z = logits.data
    t = np.asarray(target, dtype=np.float64)
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))

    def backward(g: np.ndarray) -> None:
        logits.accumulate(g * (sig - t) / z.size)

    return Tensor.make(np.asarray(loss.mean()), (logits,), "bce", backward)


def dice_loss(logits: Tensor, target: np.ndarray) -> Tensor:
    """1 - soft Dice of the obstacle-class probability (channel 1)"""
    _check(logits, target)
    if logits.shape[1] < 2:
        raise NNError("dice loss needs a background and an obstacle channel")
    prob = F.softmax(logits, axis=1)[:, 1:2, :, :]
    t = Tensor(target[:, 1:2, :, :])
    overlap = (prob * t).sum()
    total = prob.sum() + float(t.data.sum())
    return 1.0 - (overlap * 2.0 + DICE_SMOOTH) / (total + DICE_SMOOTH)


def mean_squared_error(prediction: Tensor, target: np.ndarray) -> Tensor:
    _check(prediction, target)
    diff = prediction - Tensor(target)
    return (diff * diff).mean()


LOSSES = {
    LossKind.CCE: categorical_cross_entropy,
    LossKind.BCE: binary_cross_entropy,
    LossKind.DICE: dice_loss,
    LossKind.MSE: mean_squared_error,
}


def loss_fn(kind: LossKind):
    try:
        return LOSSES[LossKind(kind)]
    except (KeyError, ValueError):
        raise NNError(f"unknown loss '{kind}'")
