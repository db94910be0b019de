"""Dense float64 tensors with reverse-mode automatic differentiation.

Eager micrograd-style engine: every operation computes its value
immediately and records a backward closure. The primitive set is exactly
what MLP backbones and the distillation losses need (matmul, broadcasted
elementwise arithmetic, relu, exp/log/sqrt, axis reductions, softmax and
fused log-softmax, basic indexing). Gradient accumulation follows the
topological order of node creation, so repeated runs are bit-identical.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

ArrayLike = Union["Tensor", np.ndarray, float, int, list]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class Tensor:
    """A node in the compute graph: value, gradient accumulator, parents.

    Leaves are created directly; ``trainable`` marks leaves whose
    gradient should be accumulated by ``backward``. Frozen leaves
    (``trainable=False``) keep an all-zero grad and their data is never
    touched by backprop.
    """

    __slots__ = ("data", "grad", "trainable", "_op", "_parents", "_backward", "_requires")

    def __init__(self, data: ArrayLike, trainable: bool = False,
                 _op: str = "leaf", _parents: Sequence["Tensor"] = ()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.trainable = trainable
        self._op = _op
        self._parents = tuple(_parents)
        self._backward: Optional[Callable[[], None]] = None
        if self._parents:
            self._requires = any(p._requires for p in self._parents)
        else:
            self._requires = trainable

    # -- introspection ------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def requires_grad(self) -> bool:
        return self._requires

    def __repr__(self) -> str:
        return f"Tensor(op={self._op!r}, shape={self.shape}, trainable={self.trainable})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Constant copy; cuts the graph."""
        return Tensor(self.data.copy())

    def set_trainable(self, flag: bool) -> None:
        self.trainable = flag
        if not self._parents:
            self._requires = flag

    # -- graph construction helpers ------------------------------------

    @staticmethod
    def _lift(x: ArrayLike) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    def _make(self, data: np.ndarray, op: str, parents: Sequence["Tensor"],
              backward: Callable[["Tensor"], None]) -> "Tensor":
        out = Tensor(data, _op=op, _parents=parents)
        if out._requires:
            out._backward = lambda: backward(out)
        return out

    # -- elementwise arithmetic (numpy broadcasting rules) --------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        other = Tensor._lift(other)
        _check_broadcast("add", self, other)
        data = self.data + other.data

        def backward(out: Tensor) -> None:
            _accum(self, _unbroadcast(out.grad, self.shape))
            _accum(other, _unbroadcast(out.grad, other.shape))

        return self._make(data, "add", (self, other), backward)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        other = Tensor._lift(other)
        _check_broadcast("sub", self, other)
        data = self.data - other.data

        def backward(out: Tensor) -> None:
            _accum(self, _unbroadcast(out.grad, self.shape))
            _accum(other, _unbroadcast(-out.grad, other.shape))

        return self._make(data, "sub", (self, other), backward)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = Tensor._lift(other)
        _check_broadcast("mul", self, other)
        data = self.data * other.data

        def backward(out: Tensor) -> None:
            _accum(self, _unbroadcast(out.grad * other.data, self.shape))
            _accum(other, _unbroadcast(out.grad * self.data, other.shape))

        return self._make(data, "mul", (self, other), backward)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = Tensor._lift(other)
        _check_broadcast("div", self, other)
        data = self.data / other.data

        def backward(out: Tensor) -> None:
            _accum(self, _unbroadcast(out.grad / other.data, self.shape))
            _accum(other, _unbroadcast(-out.grad * self.data / (other.data ** 2), other.shape))

        return self._make(data, "div", (self, other), backward)

    def __neg__(self) -> "Tensor":
        def backward(out: Tensor) -> None:
            _accum(self, -out.grad)

        return self._make(-self.data, "neg", (self,), backward)

    __radd__ = __add__
    __rmul__ = __mul__

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Tensor._lift(other) - self

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return Tensor._lift(other) / self

    # -- linear algebra -------------------------------------------------

    def matmul(self, other: ArrayLike) -> "Tensor":
        other = Tensor._lift(other)
        if self.data.ndim != 2 or other.data.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {self.shape} x {other.shape}")

        def backward(out: Tensor) -> None:
            _accum(self, out.grad @ other.data.T)
            _accum(other, self.data.T @ out.grad)

        return self._make(self.data @ other.data, "matmul", (self, other), backward)

    __matmul__ = matmul

    def transpose(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError(f"transpose: expected 2-d tensor, got shape {self.shape}")

        def backward(out: Tensor) -> None:
            _accum(self, out.grad.T)

        return self._make(self.data.T.copy(), "transpose", (self,), backward)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.shape

        def backward(out: Tensor) -> None:
            _accum(self, out.grad.reshape(old_shape))

        return self._make(self.data.reshape(shape), "reshape", (self,), backward)

    def __getitem__(self, index) -> "Tensor":
        data = self.data[index]

        def backward(out: Tensor) -> None:
            g = np.zeros_like(self.data)
            np.add.at(g, index, out.grad)
            _accum(self, g)

        return self._make(np.array(data, copy=True), "getitem", (self,), backward)

    # -- unary math -----------------------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0.0

        def backward(out: Tensor) -> None:
            _accum(self, out.grad * mask)

        return self._make(np.where(mask, self.data, 0.0), "relu", (self,), backward)

    def exp(self) -> "Tensor":
        data = np.exp(self.data)

        def backward(out: Tensor) -> None:
            _accum(self, out.grad * data)

        return self._make(data, "exp", (self,), backward)

    def log(self) -> "Tensor":
        def backward(out: Tensor) -> None:
            _accum(self, out.grad / self.data)

        return self._make(np.log(self.data), "log", (self,), backward)

    def sqrt(self) -> "Tensor":
        data = np.sqrt(self.data)

        def backward(out: Tensor) -> None:
            _accum(self, out.grad * 0.5 / data)

        return self._make(data, "sqrt", (self,), backward)

    # -- reductions -------------------------------------------------------

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        in_shape = self.shape

        def backward(out: Tensor) -> None:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(self, np.broadcast_to(g, in_shape).copy())

        return self._make(self.data.sum(axis=axis, keepdims=keepdims), "sum", (self,), backward)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def norm(self, axis: int = -1, keepdims: bool = False) -> "Tensor":
        """L2 norm along an axis, composed from primitives."""
        return (self * self).sum(axis=axis, keepdims=keepdims).sqrt()

    # -- softmax family ---------------------------------------------------

    def softmax(self, axis: int = -1) -> "Tensor":
        # Row-max subtraction for stability; the shift is constant per
        # row so the gradient is unaffected.
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        data = e / e.sum(axis=axis, keepdims=True)

        def backward(out: Tensor) -> None:
            dot = (out.grad * data).sum(axis=axis, keepdims=True)
            _accum(self, data * (out.grad - dot))

        return self._make(data, "softmax", (self,), backward)

    def log_softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

        def backward(out: Tensor) -> None:
            _accum(self, out.grad - np.exp(data) * out.grad.sum(axis=axis, keepdims=True))

        return self._make(data, "log_softmax", (self,), backward)

    # -- backward pass ------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every trainable leaf.

        ``self`` must be scalar (shape () or (1,)).
        """
        if self.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {self.shape}")
        order = _toposort(self)
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()


def _toposort(root: Tensor) -> list:
    """Iterative DFS; order is a function of graph structure only."""
    order: list = []
    visited = set()
    stack = [(root, iter(root._parents))]
    visited.add(id(root))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in visited and p._requires:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def _accum(node: Tensor, g: np.ndarray) -> None:
    if node._requires:
        node.grad = node.grad + g


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def grad_check(scalar_function: Callable[[Tensor], Tensor], point: ArrayLike,
               step: float = 1e-6) -> float:
    """Max relative error between autodiff and central finite differences.

    Relative error per coordinate is |analytic - numeric| divided by
    max(1, |analytic|, |numeric|).
    """
    if step <= 0:
        raise ValueError(f"grad_check: step must be positive, got {step}")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)

    x = Tensor(base.copy(), trainable=True)
    out = scalar_function(x)
    if out.data.size != 1:
        raise ShapeError(f"grad_check: function output must be scalar, got shape {out.shape}")
    out.backward()
    analytic = x.grad.reshape(-1).copy()

    def evaluate(values: np.ndarray) -> float:
        result = scalar_function(Tensor(values))
        if result.data.size != 1:
            raise ShapeError(f"grad_check: function output must be scalar, got shape {result.shape}")
        return result.item()

    flat = base.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = evaluate(base)
        flat[i] = orig - step
        f_minus = evaluate(base)
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        denom = max(1.0, abs(analytic[i]), abs(numeric))
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
