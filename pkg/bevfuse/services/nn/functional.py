"""Differentiable operators on NCHW tensors"""

from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from bevfuse.errors import NNError
from bevfuse.services.nn.tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _check_rank(x: Tensor, rank: int, what: str) -> None:
    if x.ndim != rank:
        raise NNError(f"{what} expects a rank-{rank} tensor, got shape {x.shape}")


def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


# Convolutions
def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """x (N, C, H, W), weight (O, C, kh, kw) -> (N, O, OH, OW); one einsum per kernel tap"""
    _check_rank(x, 4, "conv2d input")
    _check_rank(weight, 4, "conv2d weight")
    n, c, h, w = x.shape
    o, wc, kh, kw = weight.shape
    if wc != c:
        raise NNError(f"conv2d: input has {c} channels, weight expects {wc}")
    oh = conv_output_size(h, kh, stride, padding, dilation)
    ow = conv_output_size(w, kw, stride, padding, dilation)
    if oh < 1 or ow < 1:
        raise NNError(f"conv2d: {h}x{w} input too small for kernel {kh}x{kw} at dilation {dilation}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    wd = weight.data

    def window(i: int, j: int) -> Tuple[slice, slice]:
        r0, c0 = i * dilation, j * dilation
        return (
            slice(r0, r0 + stride * (oh - 1) + 1, stride),
            slice(c0, c0 + stride * (ow - 1) + 1, stride),
        )

    out = np.zeros((n, o, oh, ow))
    for i in range(kh):
        for j in range(kw):
            rs, cs = window(i, j)
            out += np.einsum("nchw,oc->nohw", xp[:, :, rs, cs], wd[:, :, i, j])

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    rs, cs = window(i, j)
                    gxp[:, :, rs, cs] += np.einsum("nohw,oc->nchw", g, wd[:, :, i, j])
            x.accumulate(gxp[:, :, padding : padding + h, padding : padding + w])
        if weight.requires_grad:
            gw = np.zeros_like(wd)
            for i in range(kh):
                for j in range(kw):
                    rs, cs = window(i, j)
                    gw[:, :, i, j] = np.einsum("nohw,nchw->oc", g, xp[:, :, rs, cs])
            weight.accumulate(gw)

    result = Tensor.make(out, (x, weight), "conv2d", backward)
    if bias is not None:
        result = result + bias.reshape(1, o, 1, 1)
    return result


def conv_transpose2d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """x (N, C, H, W), weight (C, O, kh, kw) -> (N, O, (H-1)s - 2p + kh, (W-1)s - 2p + kw)"""
    _check_rank(x, 4, "conv_transpose2d input")
    _check_rank(weight, 4, "conv_transpose2d weight")
    n, c, h, w = x.shape
    wc, o, kh, kw = weight.shape
    if wc != c:
        raise NNError(f"conv_transpose2d: input has {c} channels, weight expects {wc}")
    fh, fw = (h - 1) * stride + kh, (w - 1) * stride + kw
    oh, ow = fh - 2 * padding, fw - 2 * padding
    if oh < 1 or ow < 1:
        raise NNError("conv_transpose2d: padding removes the whole output")
    wd = weight.data

    def window(i: int, j: int) -> Tuple[slice, slice]:
        return slice(i, i + stride * (h - 1) + 1, stride), slice(j, j + stride * (w - 1) + 1, stride)

    full = np.zeros((n, o, fh, fw))
    for i in range(kh):
        for j in range(kw):
            rs, cs = window(i, j)
            full[:, :, rs, cs] += np.einsum("nchw,co->nohw", x.data, wd[:, :, i, j])
    out = full[:, :, padding : padding + oh, padding : padding + ow].copy()

    def backward(g: np.ndarray) -> None:
        gfull = np.zeros((n, o, fh, fw))
        gfull[:, :, padding : padding + oh, padding : padding + ow] = g
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    rs, cs = window(i, j)
                    gx += np.einsum("nohw,co->nchw", gfull[:, :, rs, cs], wd[:, :, i, j])
            x.accumulate(gx)
        if weight.requires_grad:
            gw = np.zeros_like(wd)
            for i in range(kh):
                for j in range(kw):
                    rs, cs = window(i, j)
                    gw[:, :, i, j] = np.einsum("nchw,nohw->co", x.data, gfull[:, :, rs, cs])
            weight.accumulate(gw)

    result = Tensor.make(out, (x, weight), "conv_transpose2d", backward)
    if bias is not None:
        result = result + bias.reshape(1, o, 1, 1)
    return result


# Normalisation
def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel normalisation; training mode updates the running buffers in place"""
    _check_rank(x, 4, "batch_norm2d input")
    c = x.shape[1]
    if training:
        count = x.data.size // c
        if count < 2:
            raise NNError("batch_norm2d needs more than one value per channel in training mode")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / (count - 1)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]

        def backward(g: np.ndarray) -> None:
            dxhat = g * gamma.data[None, :, None, None]
            if x.requires_grad:
                s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                x.accumulate(inv_std[None, :, None, None] / count * (count * dxhat - s1 - xhat * s2))
            gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
            beta.accumulate(g.sum(axis=(0, 2, 3)))

        out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
        return Tensor.make(out, (x, gamma, beta), "batch_norm2d", backward)

    inv_std = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean[None, :, None, None]) * inv_std[None, :, None, None]

    def backward_eval(g: np.ndarray) -> None:
        x.accumulate(g * (gamma.data * inv_std)[None, :, None, None])
        gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
        beta.accumulate(g.sum(axis=(0, 2, 3)))

    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
    return Tensor.make(out, (x, gamma, beta), "batch_norm2d", backward_eval)


# Activations
def relu(x: Tensor) -> Tensor:
    return x.relu()


def tanh(x: Tensor) -> Tensor:
    return x.tanh()


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        x.accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor.make(out, (x,), "softmax", backward)


def log_softmax(x: Tensor, axis: int = 1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g: np.ndarray) -> None:
        x.accumulate(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return Tensor.make(out, (x,), "log_softmax", backward)


# Layout
def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise NNError("concat of nothing")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for k, (a, b) in enumerate(zip(t.shape, ref)) if k != axis):
            raise NNError(f"concat shape mismatch: {ref} vs {t.shape} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(int(lo), int(hi))
            t.accumulate(g[tuple(index)])

    return Tensor.make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", backward)


def crop_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Keep rows [start, stop) of an NCHW tensor"""
    if not 0 <= start < stop <= x.shape[2]:
        raise NNError(f"row crop [{start}, {stop}) outside height {x.shape[2]}")
    return x[:, :, start:stop, :]


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour doubling of H and W"""
    _check_rank(x, 4, "upsample2x input")
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return Tensor.make(out, (x,), "upsample2x", backward)


def sparse_linear(x: Tensor, matrix: sparse.spmatrix) -> Tensor:
    """Apply a fixed sparse map to the last axis: (..., k) -> (..., m) with matrix (m, k)"""
    if x.shape[-1] != matrix.shape[1]:
        raise NNError(f"sparse map expects {matrix.shape[1]} inputs, got {x.shape[-1]}")
    lead = x.shape[:-1]
    flat = x.data.reshape(-1, x.shape[-1])
    out = np.asarray((matrix @ flat.T).T).reshape(lead + (matrix.shape[0],))

    def backward(g: np.ndarray) -> None:
        gflat = g.reshape(-1, matrix.shape[0])
        x.accumulate(np.asarray((matrix.T @ gflat.T).T).reshape(x.shape))

    return Tensor.make(out, (x,), "sparse_linear", backward)


# Content-aware dilation
class DilationField:
    """Per-pixel probabilities over the dilation options, stored (N, |D|, H, W)"""

    def __init__(self, probs: Tensor, dilations: Sequence[int], hidden: Optional[Tensor] = None):
        if probs.ndim != 4 or probs.shape[1] != len(dilations):
            raise NNError(f"dilation field shape {probs.shape} does not match {len(dilations)} options")
        self.probs = probs
        self.dilations = list(dilations)
        self.hidden = hidden

    def as_hwd(self, sample: int = 0) -> np.ndarray:
        """H x W x |D| view of one sample"""
        return self.probs.data[sample].transpose(1, 2, 0)

    def dominant(self) -> np.ndarray:
        """Most likely dilation per pixel, (N, H, W)"""
        return np.asarray(self.dilations)[np.argmax(self.probs.data, axis=1)]


def gumbel_softmax(
    logits: Tensor,
    tau: float,
    noise: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
    hard: bool = False,
) -> Tensor:
    """Relaxed sample over axis 1; without noise or rng this is softmax(logits / tau)"""
    if tau <= 0:
        raise NNError("Gumbel-softmax temperature must be positive")
    if noise is None and rng is not None:
        u = rng.uniform(1e-10, 1.0, logits.shape)
        noise = -np.log(-np.log(u))
    z = logits if noise is None else logits + Tensor(noise)
    probs = softmax(z * (1.0 / tau), axis=1)
    if hard:
        one_hot = np.zeros_like(probs.data)
        np.put_along_axis(one_hot, np.argmax(probs.data, axis=1)[:, None], 1.0, axis=1)
        return Tensor(one_hot)
    return probs


def markov_hidden_prior(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    prev_hidden: Optional[Tensor] = None,
    hidden_weight: Optional[Tensor] = None,
) -> Tensor:
    """Dilation logits tanh(U * x [+ w * H_prev]) from a 1x1 convolution of the layer input"""
    z = conv2d(x, weight, bias)
    if prev_hidden is not None:
        if hidden_weight is None:
            raise NNError("a recurrent prior needs hidden_weight")
        z = z + conv2d(prev_hidden, hidden_weight)
    return z.tanh()


def dilation_padding(kernel: int, dilation: int) -> int:
    if (kernel - 1) * dilation % 2:
        raise NNError(f"kernel {kernel} at dilation {dilation} has no same-size padding")
    return dilation * (kernel - 1) // 2


def adaptive_dilated_conv(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor],
    dilations: List[int],
    prior_weight: Tensor,
    prior_bias: Optional[Tensor] = None,
    tau: float = 1.0,
    noise: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
    hard: bool = False,
    prev_hidden: Optional[Tensor] = None,
    hidden_weight: Optional[Tensor] = None,
) -> Tuple[Tensor, DilationField]:
    """Shared-kernel convolution whose dilation is mixed per pixel.

    Each candidate dilation d runs the same kernel with same-size padding;
    the outputs are blended with Gumbel-softmax weights predicted from the
    input. With a single option the blend weight is exactly one and the
    result equals a static dilated convolution.
    """
    if not dilations:
        raise NNError("adaptive convolution needs at least one dilation")
    kh, kw = weight.shape[2], weight.shape[3]
    if kh != kw:
        raise NNError("adaptive convolution needs a square kernel")
    if prior_weight.shape[0] != len(dilations):
        raise NNError(f"prior predicts {prior_weight.shape[0]} options, {len(dilations)} given")

    hidden = markov_hidden_prior(x, prior_weight, prior_bias, prev_hidden, hidden_weight)
    probs = gumbel_softmax(hidden, tau, noise=noise, rng=rng, hard=hard)
    out: Optional[Tensor] = None
    for k, d in enumerate(dilations):
        branch = conv2d(x, weight, None, stride=1, padding=dilation_padding(kh, d), dilation=d)
        term = branch * probs[:, k : k + 1, :, :]
        out = term if out is None else out + term
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    out.op = "adaptive_dilated_conv"
    return out, DilationField(probs, dilations, hidden)
