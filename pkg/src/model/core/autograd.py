"""
Numeric core: a small reverse-mode differentiation tape over numpy arrays.

Every forward operation is a ``Function`` subclass. Calling ``Function.apply``
computes the output array, checks it is finite and, while gradients are enabled
and some input requires them, records the function as the output's context so
that ``Tensor.backward`` can walk the graph in reverse topological order.
"""
import logging
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.model.utils.errors import DimensionError, NumericError, UsageError

PRECISIONS = {
    "float64": np.float64,
    "float32": np.float32,
}
PARAMETER_KINDS = ("weight", "bias", "embedding")

_state = {
    "dtype": np.float64,
    "grad_enabled": True,
}

ArrayLike = Union[np.ndarray, float, int, Sequence]


def set_precision(mode: str):
    """
    Switch the global floating point precision used for new tensors.

    Args:
        mode (str): "float64" (test and gradient-check mode) or "float32" (training speed)

    Raises:
        UsageError: If the mode is unknown
    """
    if mode not in PRECISIONS:
        raise UsageError(f"Unknown precision '{mode}'. Expected one of {sorted(PRECISIONS)}")
    _state["dtype"] = PRECISIONS[mode]


def get_dtype():
    return _state["dtype"]


def get_precision() -> str:
    return "float32" if _state["dtype"] is np.float32 else "float64"


@contextmanager
def precision(mode: str) -> Iterator[None]:
    previous = get_precision()
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(previous)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording, e.g. during decoding or finite differences."""
    previous = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = previous


def _check_finite(array: np.ndarray, where: str):
    if not np.all(np.isfinite(array)):
        raise NumericError(f"{where} produced non-finite values")


class Tensor:
    """
    An n-dimensional real array that optionally records how it was computed.

    Attributes:
        data (np.ndarray): Row-major values in the current precision
        requires_grad (bool): Whether gradients flow into this tensor
        grad (np.ndarray | None): Accumulated gradient (leaf tensors only)
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False, _ctx: Optional["Function"] = None):
        self.data = np.asarray(data, dtype=get_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._ctx = _ctx

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return Add.apply(self, other)

    def __radd__(self, other):
        return Add.apply(other, self)

    def __sub__(self, other):
        return Add.apply(self, Neg.apply(other))

    def __rsub__(self, other):
        return Add.apply(other, Neg.apply(self))

    def __mul__(self, other):
        return Mul.apply(self, other)

    def __rmul__(self, other):
        return Mul.apply(other, self)

    def __neg__(self):
        return Neg.apply(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UsageError("Division is only supported by constants")
        return Mul.apply(self, 1.0 / other)

    def __matmul__(self, other):
        return MatMul.apply(self, other)

    def __getitem__(self, index):
        return GetItem.apply(self, index=index)

    def sum(self):
        return Sum.apply(self)

    def _topological_order(self) -> List["Tensor"]:
        order, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def backward(self, grad: Optional[np.ndarray] = None):
        """
        Propagate gradients from this tensor to every leaf that requires them.

        Args:
            grad (np.ndarray, optional): Upstream gradient. Required unless the tensor is a scalar.

        Raises:
            UsageError: If no upstream gradient is given for a non-scalar tensor
        """
        if grad is None:
            if self.data.size != 1:
                raise UsageError("backward() needs an explicit gradient for a non-scalar tensor")
            grad = np.ones_like(self.data)

        pending: Dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(self._topological_order()):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            if node._ctx is None:
                node.grad = node_grad if node.grad is None else node.grad + node_grad
                continue
            for parent, parent_grad in zip(node._ctx.parents, node._ctx.backward(node_grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad


class Function:
    """
    A differentiable operation. Subclasses implement ``forward`` on arrays and
    ``backward`` returning one gradient (or None) per input.
    """

    def __init__(self):
        self.parents: Tuple[Tensor, ...] = ()

    @classmethod
    def apply(cls, *args, **kwargs) -> Tensor:
        ctx = cls()
        parents = tuple(arg if isinstance(arg, Tensor) else Tensor(arg) for arg in args)
        try:
            output = ctx.forward(*[p.data for p in parents], **kwargs)
        except ValueError as e:
            raise DimensionError(f"{cls.__name__}: {e}") from e
        _check_finite(output, cls.__name__)

        if _state["grad_enabled"] and any(p.requires_grad for p in parents):
            ctx.parents = parents
            return Tensor(output, requires_grad=True, _ctx=ctx)
        return Tensor(output)

    def forward(self, *arrays, **kwargs) -> np.ndarray:
        raise NotImplementedError("Subclass must implement forward method")

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError("Subclass must implement backward method")


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    for _ in range(grad.ndim - len(shape)):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Add(Function):
    def forward(self, x, y):
        self.shapes = (x.shape, y.shape)
        return x + y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return unbroadcast(grad * self.y, self.x.shape), unbroadcast(grad * self.x, self.y.shape)


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim not in (1, 2) or b.ndim not in (1, 2):
            raise ValueError(f"matmul supports vectors and matrices, got {a.shape} and {b.shape}")
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.a, self.b
        if a.ndim == 2 and b.ndim == 2:
            return grad @ b.T, a.T @ grad
        if a.ndim == 2:
            return np.outer(grad, b), a.T @ grad
        if b.ndim == 2:
            return b @ grad, np.outer(a, grad)
        return grad * b, grad * a


class Sigmoid(Function):
    def forward(self, x):
        # tanh form never overflows
        self.out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out * self.out),)


class Log(Function):
    def forward(self, x):
        self.x = x
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Clip(Function):
    def forward(self, x, low: float, high: float):
        self.mask = (x >= low) & (x <= high)
        return np.clip(x, low, high)

    def backward(self, grad):
        return (grad * self.mask,)


class Sum(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum())

    def backward(self, grad):
        return (np.broadcast_to(grad, self.shape).copy(),)


class Concat(Function):
    def forward(self, *xs):
        if any(x.ndim != 1 for x in xs):
            raise ValueError("concat expects vectors")
        self.sizes = [x.shape[0] for x in xs]
        return np.concatenate(xs)

    def backward(self, grad):
        return np.split(grad, np.cumsum(self.sizes)[:-1])


class Stack(Function):
    def forward(self, *xs):
        return np.stack(xs)

    def backward(self, grad):
        return [grad[i] for i in range(grad.shape[0])]


class GetItem(Function):
    def forward(self, x, index):
        self.shape, self.index = x.shape, index
        return np.array(x[index])

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=grad.dtype)
        np.add.at(full, self.index, grad)
        return (full,)


class Softmax(Function):
    def forward(self, x):
        if x.ndim != 1:
            raise ValueError(f"softmax expects a vector, got shape {x.shape}")
        shifted = np.exp(x - x.max())
        self.out = shifted / shifted.sum()
        return self.out

    def backward(self, grad):
        return (self.out * (grad - np.dot(grad, self.out)),)


class CrossEntropy(Function):
    """-log softmax(logits)[target], fused for stability."""

    def forward(self, logits, target: int):
        shifted = logits - logits.max()
        exp = np.exp(shifted)
        total = exp.sum()
        self.probs = exp / total
        self.target = target
        return np.asarray(np.log(total) - shifted[target])

    def backward(self, grad):
        local = self.probs.copy()
        local[self.target] -= 1.0
        return (grad * local,)


def affine(M: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """Returns Mx + b."""
    if M.shape[-1:] != x.shape or M.shape[:1] != b.shape:
        raise DimensionError(f"affine: cannot apply matrix {M.shape} to {x.shape} with bias {b.shape}")
    return M @ x + b


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def softmax(x: Tensor) -> Tensor:
    return Softmax.apply(x)


def log(x: Tensor) -> Tensor:
    return Log.apply(x)


def clamp(x: Tensor, low: float, high: float) -> Tensor:
    return Clip.apply(x, low=low, high=high)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    return Concat.apply(*tensors)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    return Stack.apply(*tensors)


def dot(x: Tensor, y: Tensor) -> Tensor:
    return MatMul.apply(x, y)


def sum_squares(x: Tensor) -> Tensor:
    return (x * x).sum()


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    return CrossEntropy.apply(logits, target=target)


class ParameterRegistry:
    """
    Ordered mapping of parameter name to leaf tensor.

    Each parameter carries a kind ("weight", "bias" or "embedding") so that
    regularization and initialization can address groups of parameters.
    """

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._kinds: Dict[str, str] = {}

    def add(self, name: str, data: ArrayLike, kind: str = "weight") -> Tensor:
        if name in self._params:
            raise UsageError(f"Parameter '{name}' is already registered")
        if kind not in PARAMETER_KINDS:
            raise UsageError(f"Unknown parameter kind '{kind}'")
        tensor = Tensor(np.array(data, dtype=get_dtype()), requires_grad=True)
        _check_finite(tensor.data, f"parameter '{name}'")
        self._params[name] = tensor
        self._kinds[name] = kind
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def kind(self, name: str) -> str:
        return self._kinds[name]

    def names(self, kind: Optional[str] = None, prefix: str = "") -> List[str]:
        return [
            name for name in self._params
            if (kind is None or self._kinds[name] == kind) and name.startswith(prefix)
        ]

    def num_parameters(self) -> int:
        return sum(p.size for p in self._params.values())

    def zero_grad(self):
        for param in self._params.values():
            param.grad = None

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self._params.items()}

    def load(self, arrays: Dict[str, np.ndarray]):
        """
        Overwrite parameter values in place.

        Raises:
            UsageError: If a name is missing
            DimensionError: If a shape differs
        """
        for name, param in self._params.items():
            if name not in arrays:
                raise UsageError(f"Missing value for parameter '{name}'")
            value = np.asarray(arrays[name], dtype=get_dtype())
            if value.shape != param.shape:
                raise DimensionError(f"Parameter '{name}' expects shape {param.shape}, got {value.shape}")
            param.data = value.copy()


def gradient(loss: Tensor, params: ParameterRegistry) -> Dict[str, np.ndarray]:
    """
    Computes d(loss)/d(p) for every registered parameter.

    Args:
        loss (Tensor): Scalar tensor built from the registry's parameters
        params (ParameterRegistry): Parameters to differentiate against

    Returns:
        Dict[str, np.ndarray]: Gradient per parameter name, zeros for unused parameters

    Raises:
        UsageError: If loss is not a scalar
    """
    if loss.data.size != 1:
        raise UsageError(f"gradient() needs a scalar loss, got shape {loss.shape}")
    params.zero_grad()
    if loss.requires_grad:
        loss.backward()
    return {
        name: param.grad.copy() if param.grad is not None else np.zeros_like(param.data)
        for name, param in params.items()
    }


def grad_check(loss_fn: Callable[[], Tensor],
               params: ParameterRegistry,
               eps: float = 1e-4,
               max_coords: Optional[int] = None,
               seed: int = 0,
               names: Optional[Sequence[str]] = None,
               floor: float = 1e-8) -> float:
    """
    Compares analytic gradients against central differences.

    Args:
        loss_fn (Callable[[], Tensor]): Rebuilds the scalar loss from the current parameter values
        params (ParameterRegistry): Parameters to check
        eps (float): Perturbation, within [1e-6, 1e-3]
        max_coords (int, optional): Check at most this many randomly chosen coordinates per parameter
        seed (int): Seed for the coordinate sample
        names (Sequence[str], optional): Restrict the check to these parameters
        floor (float): Smallest denominator of the relative error, > 0

    Returns:
        float: max over coordinates of |a - n| / max(floor, |a| + |n|)

    Raises:
        UsageError: If eps is out of range or the precision is not 64-bit
    """
    if not 1e-6 <= eps <= 1e-3:
        raise UsageError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    if floor <= 0:
        raise UsageError(f"floor must be positive, got {floor}")
    if get_dtype() is not np.float64:
        raise UsageError("Gradient checking requires 64-bit precision")

    analytic = gradient(loss_fn(), params)
    rng = np.random.Generator(np.random.Philox(seed))
    worst = 0.0

    with no_grad():
        for name in names or list(params):
            param = params[name]
            coords = np.arange(param.size)
            if max_coords is not None and param.size > max_coords:
                coords = np.sort(rng.choice(param.size, size=max_coords, replace=False))
            for flat_index in coords:
                index = np.unravel_index(int(flat_index), param.shape)
                original = param.data[index]
                param.data[index] = original + eps
                plus = loss_fn().item()
                param.data[index] = original - eps
                minus = loss_fn().item()
                param.data[index] = original

                numeric = (plus - minus) / (2.0 * eps)
                value = analytic[name][index]
                error = abs(value - numeric) / max(floor, abs(value) + abs(numeric))
                worst = max(worst, error)

    logging.info(f"Gradient check over {len(names or params)} parameter(s): max relative error {worst:.3e}")
    return worst
