from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from bevfuse.errors import NNError

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Dense float64 array with reverse-mode gradients.

    Every op records its parents and a closure that pushes the output
    gradient back to them; `backward` walks the graph in reverse
    topological order.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        parents: Tuple["Tensor", ...] = (),
        op: str = "",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.op = op
        self._parents = parents
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # Construction helpers
    @classmethod
    def param(cls, data: ArrayLike) -> "Tensor":
        return cls(data, requires_grad=True)

    @staticmethod
    def wrap(value: Union["Tensor", ArrayLike]) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def parents(self) -> Tuple["Tensor", ...]:
        return self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op='{self.op}', requires_grad={self.requires_grad})"

    def accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if grad.shape != self.data.shape:
            raise NNError(f"gradient shape {grad.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    @staticmethod
    def make(data: np.ndarray, parents: Iterable["Tensor"], op: str, backward: Callable[[np.ndarray], None]) -> "Tensor":
        parents = tuple(parents)
        out = Tensor(data, parents=parents, op=op)
        if out.requires_grad:
            out._backward = backward
        return out

    def graph(self) -> List["Tensor"]:
        """Nodes reachable from this tensor, parents before children"""
        order: List[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise NNError("backward without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        self.accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(self.graph()):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Elementwise arithmetic
    def __add__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        other = Tensor.wrap(other)
        a, b = self, other

        def backward(g: np.ndarray) -> None:
            a.accumulate(_unbroadcast(g, a.shape))
            b.accumulate(_unbroadcast(g, b.shape))

        return Tensor.make(a.data + b.data, (a, b), "add", backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self
        return Tensor.make(-a.data, (a,), "neg", lambda g: a.accumulate(-g))

    def __sub__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return self + (-Tensor.wrap(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Tensor.wrap(other) + (-self)

    def __mul__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        other = Tensor.wrap(other)
        a, b = self, other

        def backward(g: np.ndarray) -> None:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
            b.accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor.make(a.data * b.data, (a, b), "mul", backward)

    __rmul__ = __mul__

    def __truediv__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        other = Tensor.wrap(other)
        a, b = self, other

        def backward(g: np.ndarray) -> None:
            a.accumulate(_unbroadcast(g / b.data, a.shape))
            b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor.make(a.data / b.data, (a, b), "div", backward)

    def __pow__(self, exponent: float) -> "Tensor":
        a = self
        return Tensor.make(
            a.data**exponent, (a,), "pow", lambda g: a.accumulate(g * exponent * a.data ** (exponent - 1))
        )

    # Reductions and shape
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self

        def backward(g: np.ndarray) -> None:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(g, a.shape).copy())

        return Tensor.make(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum", backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    def reshape(self, *shape) -> "Tensor":
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor.make(a.data.reshape(shape), (a,), "reshape", lambda g: a.accumulate(g.reshape(a.shape)))

    def transpose(self, *axes) -> "Tensor":
        a = self
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)
        return Tensor.make(
            a.data.transpose(axes), (a,), "transpose", lambda g: a.accumulate(g.transpose(inverse))
        )

    def __getitem__(self, index) -> "Tensor":
        a = self

        def backward(g: np.ndarray) -> None:
            full = np.zeros_like(a.data)
            np.add.at(full, index, g)
            a.accumulate(full)

        return Tensor.make(a.data[index], (a,), "slice", backward)

    def matmul(self, other: "Tensor") -> "Tensor":
        """(..., k) @ (k, m)"""
        a, b = self, Tensor.wrap(other)
        if b.ndim != 2 or a.shape[-1] != b.shape[0]:
            raise NNError(f"matmul shape mismatch {a.shape} @ {b.shape}")

        def backward(g: np.ndarray) -> None:
            a.accumulate(g @ b.data.T)
            b.accumulate(a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1]))

        return Tensor.make(a.data @ b.data, (a, b), "matmul", backward)

    __matmul__ = matmul

    # Pointwise nonlinearities
    def exp(self) -> "Tensor":
        a = self
        out = np.exp(a.data)
        return Tensor.make(out, (a,), "exp", lambda g: a.accumulate(g * out))

    def log(self) -> "Tensor":
        a = self
        return Tensor.make(np.log(a.data), (a,), "log", lambda g: a.accumulate(g / a.data))

    def relu(self) -> "Tensor":
        a = self
        mask = a.data > 0
        return Tensor.make(a.data * mask, (a,), "relu", lambda g: a.accumulate(g * mask))

    def tanh(self) -> "Tensor":
        a = self
        out = np.tanh(a.data)
        return Tensor.make(out, (a,), "tanh", lambda g: a.accumulate(g * (1.0 - out * out)))

    def sigmoid(self) -> "Tensor":
        a = self
        out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
        return Tensor.make(out, (a,), "sigmoid", lambda g: a.accumulate(g * out * (1.0 - out)))
