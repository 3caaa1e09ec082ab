import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from bevfuse.errors import NNError
from bevfuse.models.network import Activation, ConvSpec, PriorMode
from bevfuse.services.nn import functional as F
from bevfuse.services.nn.functional import DilationField
from bevfuse.services.nn.tensor import Tensor


class Module:
    """Parameter container with train/eval mode and named state"""

    def __init__(self):
        self.training = True

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self.children():
            yield from child.modules(f"{prefix}.{name}" if prefix else name)

    def local_parameters(self) -> Dict[str, Tensor]:
        return {k: v for k, v in vars(self).items() if isinstance(v, Tensor) and v.requires_grad}

    def local_buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        out = []
        for prefix, module in self.modules():
            for name, param in module.local_parameters().items():
                out.append((f"{prefix}.{name}" if prefix else name, param))
        return out

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Parameters and buffers by dotted name"""
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for prefix, module in self.modules():
            for name, buf in module.local_buffers().items():
                state[f"{prefix}.{name}" if prefix else name] = buf.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = sorted(set(expected) - set(state))
        unexpected = sorted(set(state) - set(expected))
        if missing or unexpected:
            raise NNError(f"checkpoint does not match the network (missing {missing[:3]}, unexpected {unexpected[:3]})")
        for name, value in state.items():
            if value.shape != expected[name].shape:
                raise NNError(f"checkpoint blob '{name}' has shape {value.shape}, expected {expected[name].shape}")
        params = dict(self.named_parameters())
        for prefix, module in self.modules():
            for name, buf in module.local_buffers().items():
                buf[...] = state[f"{prefix}.{name}" if prefix else name]
        for name, param in params.items():
            param.data = np.array(state[name], dtype=np.float64)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self) -> "Module":
        for _, module in self.modules():
            module.training = True
        return self

    def eval(self) -> "Module":
        for _, module in self.modules():
            module.training = False
        return self


def he_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> Tensor:
    bound = math.sqrt(6.0 / max(fan_in, 1))
    return Tensor.param(rng.uniform(-bound, bound, shape))


def activate(x: Tensor, activation: Activation) -> Tensor:
    return x.tanh() if activation == Activation.TANH else x.relu()


def square_kernel(spec: ConvSpec) -> int:
    kh, kw = spec.kernel
    if kh != kw:
        raise NNError(f"layers use square kernels, got {kh}x{kw}")
    return kh


class Conv2d(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        kernel: int = 3,
        stride: int = 1,
        padding: Optional[int] = None,
        dilation: int = 1,
        bias: bool = True,
    ):
        super().__init__()
        self.stride = stride
        self.dilation = dilation
        self.padding = F.dilation_padding(kernel, dilation) if padding is None else padding
        self.weight = he_uniform(rng, (out_channels, in_channels, kernel, kernel), in_channels * kernel * kernel)
        self.bias = Tensor.param(np.zeros(out_channels)) if bias else None

    @classmethod
    def from_spec(cls, rng: np.random.Generator, spec: ConvSpec, bias: bool = True) -> "Conv2d":
        if spec.is_adaptive:
            raise NNError("adaptive ConvSpec needs AdaptiveDilatedConv2d")
        return cls(rng, spec.in_channels, spec.out_channels, square_kernel(spec), spec.stride, spec.padding, spec.dilation, bias)

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class ConvTranspose2d(Module):
    def __init__(
        self, rng: np.random.Generator, in_channels: int, out_channels: int, kernel: int, stride: int, padding: int = 0
    ):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = he_uniform(rng, (in_channels, out_channels, kernel, kernel), in_channels * kernel * kernel)
        self.bias = Tensor.param(np.zeros(out_channels))

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int):
        super().__init__()
        self.gamma = Tensor.param(np.ones(channels))
        self.beta = Tensor.param(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def local_buffers(self) -> Dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def __call__(self, x: Tensor) -> Tensor:
        return F.batch_norm2d(x, self.gamma, self.beta, self.running_mean, self.running_var, self.training)


class ConvBlock(Module):
    """conv -> batch norm -> activation"""

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        activation: Activation,
        kernel: int = 3,
        stride: int = 1,
    ):
        super().__init__()
        self.conv = Conv2d(rng, in_channels, out_channels, kernel, stride, padding=kernel // 2, bias=False)
        self.norm = BatchNorm2d(out_channels)
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        return activate(self.norm(self.conv(x)), self.activation)


class AdaptiveDilatedConv2d(Module):
    """Content-aware dilated 3x3 convolution with a Markov (or recurrent) hidden prior"""

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        dilations: List[int],
        tau: float = 1.0,
        prior_mode: PriorMode = PriorMode.MARKOV,
        kernel: int = 3,
    ):
        super().__init__()
        self.dilations = list(dilations)
        self.tau = tau
        self.hard = False
        self.prior_mode = prior_mode
        self.weight = he_uniform(rng, (out_channels, in_channels, kernel, kernel), in_channels * kernel * kernel)
        self.bias = Tensor.param(np.zeros(out_channels))
        d = len(self.dilations)
        self.prior_weight = Tensor.param(rng.normal(0.0, 0.1, (d, in_channels, 1, 1)))
        self.prior_bias = Tensor.param(np.zeros(d))
        self.hidden_weight = Tensor.param(rng.normal(0.0, 0.1, (d, d, 1, 1))) if prior_mode == PriorMode.RECURRENT else None
        self.last_field: Optional[DilationField] = None

    @classmethod
    def from_spec(
        cls, rng: np.random.Generator, spec: ConvSpec, tau: float = 1.0, prior_mode: PriorMode = PriorMode.MARKOV
    ) -> "AdaptiveDilatedConv2d":
        if not spec.is_adaptive:
            raise NNError("ConvSpec has no dilation options")
        if spec.stride != 1:
            raise NNError("adaptive dilated convolutions keep the resolution (stride 1)")
        return cls(rng, spec.in_channels, spec.out_channels, spec.dilation_options, tau, prior_mode, square_kernel(spec))

    def __call__(
        self, x: Tensor, rng: Optional[np.random.Generator] = None, prev_hidden: Optional[Tensor] = None
    ) -> Tuple[Tensor, DilationField]:
        use_prev = prev_hidden if self.prior_mode == PriorMode.RECURRENT else None
        out, field = F.adaptive_dilated_conv(
            x,
            self.weight,
            self.bias,
            self.dilations,
            self.prior_weight,
            self.prior_bias,
            tau=self.tau,
            rng=rng if self.training else None,
            hard=self.hard and not self.training,
            prev_hidden=use_prev,
            hidden_weight=self.hidden_weight if use_prev is not None else None,
        )
        self.last_field = field
        return out, field
