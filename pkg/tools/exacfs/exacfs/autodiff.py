"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Every differentiable operation is a `Function` subclass with a `forward` on raw
arrays and a `backward` that maps the output gradient to input gradients.
Applying a function to tensors that require gradients appends a node to a
`Tape`; nodes are stored in execution order, so the insertion order is a
topological order and `backward` simply walks the tape in reverse.

Tapes are define-by-run: the first recorded operation of a forward pass opens a
tape (or joins the one activated with ``with Tape():``) and every operation that
consumes its outputs joins it too. An operation combining outputs of two tapes
merges them into one.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DimensionError

ArrayLike = Union[np.ndarray, float, int, Sequence]

_state = threading.local()


def is_grad_enabled() -> bool:
    """Whether operations are currently recorded."""
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them on any tape."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def _active_tapes() -> List["Tape"]:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


@dataclass
class Node:
    """One recorded operation."""

    kind: str
    function: "Function"
    inputs: Tuple["Tensor", ...]
    output: "Tensor"


class Tape:
    """Append-only record of the operations of one forward pass."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _active_tapes().append(self)
        return self

    def __exit__(self, *exc_info) -> None:
        _active_tapes().remove(self)

    def record(self, function: "Function", inputs: Tuple["Tensor", ...], output: "Tensor") -> int:
        """Append a node and return its id."""
        self.nodes.append(Node(function.kind, function, inputs, output))
        return len(self.nodes) - 1

    def absorb(self, other: "Tape") -> None:
        """Move another tape's nodes onto this one.

        Two tapes only meet when independent subgraphs are combined, so
        appending keeps execution order a topological order.
        """
        offset = len(self.nodes)
        for node in other.nodes:
            node.output.tape = self
            node.output.node_id += offset
            self.nodes.append(node)
        other.nodes = []

    def backward(self, loss: "Tensor") -> None:
        """Propagate d(loss)/d(.) to every requires_grad tensor reachable from loss.

        Gradients are added to ``.grad``, so repeated calls accumulate.
        """
        if loss.tape is not self or loss.node_id is None:
            raise ContractError("loss is not recorded on this tape")

        pending: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for node_id in range(loss.node_id, -1, -1):
            grad = pending.pop(node_id, None)
            if grad is None:
                continue
            node = self.nodes[node_id]
            node.output._accumulate(grad)
            for tensor, input_grad in zip(node.inputs, node.function.backward(grad)):
                if input_grad is None or not tensor.requires_grad:
                    continue
                if tensor.tape is self and tensor.node_id is not None:
                    if tensor.node_id in pending:
                        pending[tensor.node_id] = pending[tensor.node_id] + input_grad
                    else:
                        pending[tensor.node_id] = input_grad
                else:
                    tensor._accumulate(input_grad)


class Tensor:
    """An n-dimensional float64 array that can take part in a tape.

    Args:
        data: Values; always copied into a contiguous float64 array
        requires_grad: Whether gradients are tracked for this tensor
    """

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.tape: Optional[Tape] = None
        self.node_id: Optional[int] = None

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        tensor = cls.__new__(cls)
        tensor.data = np.ascontiguousarray(array, dtype=np.float64)
        tensor.grad = None
        tensor.requires_grad = False
        tensor.tape = None
        tensor.node_id = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64).reshape(self.shape)
        else:
            self.grad = self.grad + grad

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        return reduce_mean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _tape_for(tensors: Sequence[Tensor]) -> Tape:
    tapes = []
    for tensor in tensors:
        if tensor.tape is not None and all(tensor.tape is not t for t in tapes):
            tapes.append(tensor.tape)
    if tapes:
        for other in tapes[1:]:
            tapes[0].absorb(other)
        return tapes[0]
    active = _active_tapes()
    return active[-1] if active else Tape()


class Function:
    """Base class of differentiable operations."""

    kind = "function"

    def __init__(self, **params) -> None:
        self.params = params

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward")

    @classmethod
    def apply(cls, *inputs: Union[Tensor, ArrayLike], **params) -> Tensor:
        tensors = tuple(_as_tensor(value) for value in inputs)
        function = cls(**params)
        out = Tensor._wrap(function.forward(*(t.data for t in tensors)))
        if is_grad_enabled() and any(t.requires_grad for t in tensors):
            tape = _tape_for(tensors)
            out.requires_grad = True
            out.tape = tape
            out.node_id = tape.record(function, tensors, out)
        return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out the dimensions numpy broadcasting added or stretched."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Add(Function):
    kind = "add"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    kind = "sub"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    kind = "mul"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return _unbroadcast(grad * self.b, self.a.shape), _unbroadcast(grad * self.a, self.b.shape)


class MatMul(Function):
    kind = "matmul"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class Relu(Function):
    """max(0, x); the subgradient at exactly 0 is taken as 0."""

    kind = "relu"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class Sum(Function):
    kind = "sum"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        return np.sum(x, axis=self.params["axis"])

    def backward(self, grad):
        axis = self.params["axis"]
        if axis is not None:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Function):
    kind = "mean"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        axis = self.params["axis"]
        self.count = x.size if axis is None else x.shape[axis]
        return np.sum(x, axis=axis) / self.count

    def backward(self, grad):
        axis = self.params["axis"]
        if axis is not None:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad / self.count, self.shape).copy(),)


class Reshape(Function):
    kind = "reshape"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        try:
            return x.reshape(self.params["shape"])
        except ValueError as e:
            raise DimensionError(f"reshape: cannot view {x.shape} as {self.params['shape']}") from e

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    kind = "transpose"

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2:
            raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
        return x.T

    def backward(self, grad):
        return (grad.T,)


class GridMean(Function):
    """Average each channel over its h x w grid: (d,h,w) -> (d,) or (n,d,h,w) -> (n,d)."""

    kind = "grid_mean"

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim not in (3, 4):
            raise DimensionError(f"grid_mean expects (d,h,w) or (n,d,h,w), got shape {x.shape}")
        self.shape = x.shape
        return x.mean(axis=(-2, -1))

    def backward(self, grad):
        h, w = self.shape[-2:]
        return (np.broadcast_to(grad[..., None, None] / (h * w), self.shape).copy(),)


class Conv2d(Function):
    """Cross-correlation of (c,h,w) or (n,c,h,w) inputs with (o,c,kh,kw) kernels."""

    kind = "conv2d"

    def forward(self, x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
        stride, padding = self.params["stride"], self.params["padding"]
        if stride < 1 or padding < 0:
            raise ContractError(f"conv2d: stride must be >= 1 and padding >= 0, got {stride}, {padding}")
        self.unbatched = x.ndim == 3
        if self.unbatched:
            x = x[None]
        if x.ndim != 4 or kernels.ndim != 4 or x.shape[1] != kernels.shape[1]:
            raise DimensionError(f"conv2d: input {x.shape} does not fit kernels {kernels.shape}")
        kh, kw = kernels.shape[2:]
        if kh > x.shape[2] + 2 * padding or kw > x.shape[3] + 2 * padding:
            raise DimensionError(
                f"conv2d: kernel {kernels.shape} larger than padded input {x.shape} (padding {padding})"
            )
        padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
        windows = windows[:, :, ::stride, ::stride]
        self.padded_shape = padded.shape
        self.windows = windows
        self.kernels = kernels
        out = np.tensordot(windows, kernels, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        return out[0] if self.unbatched else out

    def backward(self, grad):
        stride, padding = self.params["stride"], self.params["padding"]
        if self.unbatched:
            grad = grad[None]
        kh, kw = self.kernels.shape[2:]
        out_h, out_w = grad.shape[2:]
        grad_kernels = np.tensordot(grad, self.windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_padded = np.zeros(self.padded_shape)
        for i in range(kh):
            for j in range(kw):
                contribution = np.tensordot(grad, self.kernels[:, :, i, j], axes=([1], [0]))
                grad_padded[
                    :, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride
                ] += contribution.transpose(0, 3, 1, 2)
        h, w = self.padded_shape[2] - 2 * padding, self.padded_shape[3] - 2 * padding
        grad_x = grad_padded[:, :, padding : padding + h, padding : padding + w]
        return (grad_x[0] if self.unbatched else grad_x), grad_kernels


class L2Normalize(Function):
    """x / max(||x||, eps) along one axis."""

    kind = "l2_normalize"

    def forward(self, x: np.ndarray) -> np.ndarray:
        axis, eps = self.params["axis"], self.params["eps"]
        norm = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))
        self.clipped = norm <= eps
        self.denom = np.where(self.clipped, eps, norm)
        self.out = x / self.denom
        return self.out

    def backward(self, grad):
        axis = self.params["axis"]
        radial = np.sum(grad * self.out, axis=axis, keepdims=True)
        projected = np.where(self.clipped, grad, grad - self.out * radial)
        return (projected / self.denom,)


class CrossEntropy(Function):
    """Per-sample -log softmax(logits)[label] for (n,k) logits."""

    kind = "cross_entropy"

    def forward(self, logits: np.ndarray) -> np.ndarray:
        labels = np.asarray(self.params["labels"], dtype=np.int64)
        if logits.ndim != 2 or labels.shape != (logits.shape[0],):
            raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
            raise ContractError(f"cross_entropy: labels must lie in [0, {logits.shape[1]})")
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.sum(np.exp(shifted), axis=1))
        self.labels = labels
        self.probs = np.exp(shifted - log_norm[:, None])
        return log_norm - shifted[np.arange(labels.size), labels]

    def backward(self, grad):
        delta = self.probs.copy()
        delta[np.arange(self.labels.size), self.labels] -= 1.0
        return (delta * grad[:, None],)


def add(a: Union[Tensor, ArrayLike], b: Union[Tensor, ArrayLike]) -> Tensor:
    return Add.apply(a, b)


def sub(a: Union[Tensor, ArrayLike], b: Union[Tensor, ArrayLike]) -> Tensor:
    return Sub.apply(a, b)


def mul(a: Union[Tensor, ArrayLike], b: Union[Tensor, ArrayLike]) -> Tensor:
    return Mul.apply(a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


def reduce_sum(x: Tensor, axis: Optional[int] = None) -> Tensor:
    return Sum.apply(x, axis=axis)


def reduce_mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    return Mean.apply(x, axis=axis)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def transpose(x: Tensor) -> Tensor:
    return Transpose.apply(x)


def grid_mean(x: Tensor) -> Tensor:
    return GridMean.apply(x)


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return Conv2d.apply(x, kernels, stride=stride, padding=padding)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-8) -> Tensor:
    return L2Normalize.apply(x, axis=axis, eps=eps)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Per-sample classification losses, shape (n,)."""
    return CrossEntropy.apply(logits, labels=labels)


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss; gradients accumulate until zeroed."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        # constant loss: nothing on a tape depends on it
        return
    loss.tape.backward(loss)
