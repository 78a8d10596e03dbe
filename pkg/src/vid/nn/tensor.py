"""Dense tensors that record a reverse-mode computation graph."""

from __future__ import annotations

import contextlib

import numpy as np

_state = {"grad": True, "checked": False}


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (evaluation, feature extraction)."""
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


@contextlib.contextmanager
def checked(enabled: bool = True):
    """Reject NaN/Inf in every op output inside the block."""
    prev = _state["checked"]
    _state["checked"] = enabled
    try:
        yield
    finally:
        _state["checked"] = prev


def grad_enabled() -> bool:
    return _state["grad"]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def from_op(cls, data, parents, backward, op: str) -> "Tensor":
        """Wrap an op result; ``backward(g)`` returns one gradient per parent."""
        out = cls(data)
        if _state["checked"] and not np.all(np.isfinite(out.data)):
            raise FloatingPointError(f"non-finite output from {op}")
        if _state["grad"] and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out.op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf.

        Each node is visited once, in reverse topological order, so fan-out
        contributions are summed before they propagate further.
        """
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- elementwise arithmetic with broadcasting ----------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other, self.data.dtype)
        a, b = self, other
        return Tensor.from_op(
            a.data + b.data,
            (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
            "add",
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other, self.data.dtype))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other, self.data.dtype) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other, self.data.dtype)
        a, b = self, other
        return Tensor.from_op(
            a.data * b.data,
            (a, b),
            lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other, self.data.dtype)
        a, b = self, other
        return Tensor.from_op(
            a.data / b.data,
            (a, b),
            lambda g: (
                _unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
            ),
            "div",
        )

    def __matmul__(self, other) -> "Tensor":
        a, b = self, as_tensor(other, self.data.dtype)
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError("matmul supports 2-D operands only")
        return Tensor.from_op(
            a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul"
        )

    @property
    def T(self) -> "Tensor":
        if self.ndim != 2:
            raise ValueError("transpose supports 2-D tensors only")
        return Tensor.from_op(self.data.T, (self,), lambda g: (g.T,), "transpose")

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        old = self.shape
        return Tensor.from_op(
            self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),), "reshape"
        )

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * out,), "exp")

    def log(self) -> "Tensor":
        x = self.data
        return Tensor.from_op(np.log(x), (self,), lambda g: (g / x,), "log")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)
