"""Tensor type, gradient tape and reverse-mode backward pass."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32
_TAPES: list["GradientTape"] = []


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


class ContractError(RuntimeError):
    """Raised when an operation's preconditions are violated."""


def dtype_for(precision: int) -> type:
    if precision == 32:
        return np.float32
    if precision == 64:
        return np.float64
    raise ValueError(f"precision must be 32 or 64, got {precision}")


def set_precision(precision: int) -> None:
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = dtype_for(precision)


def get_dtype() -> type:
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(bits: int) -> Iterator[None]:
    """Temporarily switch the default float precision (32 or 64)."""
    global _DEFAULT_DTYPE
    saved = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = dtype_for(bits)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = saved


class Tensor:
    """Dense row-major array with an optional gradient slot.

    Values are stored in a numpy array; ``requires_grad`` marks tensors whose
    gradient should be tracked when an active :class:`GradientTape` records
    operations involving them.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_produced")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            arr = data
        else:
            arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._produced = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops

        return ops.index(self, index)


@dataclass
class Node:
    out: Tensor
    parents: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass
class GradientTape:
    """Records operation nodes in execution order while active.

    Use as a context manager; nested tapes record only on the innermost one.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "GradientTape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> GradientTape | None:
    return _TAPES[-1] if _TAPES else None


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording on every active tape."""
    saved = list(_TAPES)
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES.extend(saved)


def record(op: str, out_data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap ``out_data`` in a Tensor and record a node if any parent is tracked."""
    out = Tensor(out_data, dtype=out_data.dtype)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._produced = True
        tape.nodes.append(Node(out, tuple(parents), backward_fn, op))
    return out


class Gradients(dict):
    """Mapping from tensor to gradient array; untouched tensors read as zeros."""

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = dict.get(self, id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g[1]

    def __contains__(self, t) -> bool:
        return dict.__contains__(self, id(t))

    def tensors(self) -> list[Tensor]:
        return [v[0] for v in self.values()]


def backward(loss: Tensor, tape: GradientTape) -> Gradients:
    """Reverse-mode sweep over ``tape`` seeded at the scalar ``loss``.

    Returns gradients for every tracked tensor reached. Leaf tensors (those not
    produced on the tape) additionally have the gradient added to ``.grad``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    acc: dict[int, list] = {id(loss): [loss, np.ones_like(loss.data)]}
    for node in reversed(tape.nodes):
        entry = acc.get(id(node.out))
        if entry is None:
            continue
        parent_grads = node.backward(entry[1])
        for p, g in zip(node.parents, parent_grads):
            if g is None or not p.requires_grad:
                continue
            slot = acc.get(id(p))
            if slot is None:
                acc[id(p)] = [p, np.array(g, dtype=p.data.dtype, copy=True).reshape(p.shape)]
            else:
                slot[1] += g.reshape(p.shape)
    grads = Gradients()
    for key, (t, g) in acc.items():
        dict.__setitem__(grads, key, (t, g))
        if not t._produced and t.requires_grad:
            t.grad = g.copy() if t.grad is None else t.grad + g
    return grads
