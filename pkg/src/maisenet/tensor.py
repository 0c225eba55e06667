"""Dense double-precision tensors with reverse-mode differentiation.

The differentiation layer is deliberately small: it covers exactly the
kernels the feature blocks are built from (convolution, pooling,
resampling, attention algebra) rather than a general graph compiler.
Everything is float64 so that finite-difference verification of the
analytic gradients is meaningful.

Feature maps follow the (batch, channel, height, width) layout. The
Tensor class itself accepts any rank because weights, biases and the
flattened matrices inside attention blocks are lower-rank.
"""

from __future__ import annotations

import contextlib
import hashlib

import numpy as np

__all__ = [
    "AXIS_NAMES",
    "NonFiniteError",
    "PatternTrace",
    "ShapeError",
    "Tensor",
    "no_grad",
    "record_pattern",
    "resolve_axis",
    "trace_patterns",
]


class ShapeError(ValueError):
    """An operation rejected its operands; the message names the offending axis."""


class NonFiniteError(FloatingPointError):
    """A kernel produced NaN or Inf; the message names the operation."""


# Finite-value validation of every op result. Cheap at the sizes this
# library targets; can be switched off for bulk forward passes.
FINITE_CHECKS = True

_grad_enabled = True
_pattern_sink: "PatternTrace | None" = None


@contextlib.contextmanager
def no_grad():
    """Run the enclosed block without recording the backward graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class PatternTrace:
    """Digest of the discrete decisions taken by one forward pass.

    Piecewise-linear kernels (relu, max pooling) register which linear
    piece they evaluated on. Two passes with equal digests stayed on the
    same piece everywhere, so a finite difference between them is valid.
    """

    def __init__(self):
        self._hash = hashlib.blake2b(digest_size=16)

    def add(self, arr: np.ndarray) -> None:
        self._hash.update(np.ascontiguousarray(arr).tobytes())

    def digest(self) -> bytes:
        return self._hash.digest()


@contextlib.contextmanager
def trace_patterns(trace: PatternTrace):
    """Route kink-pattern records from relu/argmax kernels into ``trace``."""
    global _pattern_sink
    prev = _pattern_sink
    _pattern_sink = trace
    try:
        yield trace
    finally:
        _pattern_sink = prev


def record_pattern(arr: np.ndarray) -> None:
    if _pattern_sink is not None:
        _pattern_sink.add(arr)


AXIS_NAMES = {"batch": 0, "channel": 1, "height": 2, "width": 3}


def resolve_axis(axis, rank: int) -> int:
    """Accept an integer axis or one of the named feature-map axes."""
    if isinstance(axis, str):
        if axis not in AXIS_NAMES:
            raise ShapeError(f"unknown axis name {axis!r}; expected one of {sorted(AXIS_NAMES)}")
        idx = AXIS_NAMES[axis]
    else:
        idx = int(axis)
    if idx < 0:
        idx += rank
    if not 0 <= idx < rank:
        raise ShapeError(f"axis {axis!r} out of range for rank-{rank} tensor")
    return idx


def _ensure_finite(arr: np.ndarray, context: str) -> None:
    if FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{context} produced non-finite values")


class Tensor:
    """A dense float64 array plus optional backward bookkeeping.

    Tensors are values: no kernel writes into an existing tensor's
    buffer, so tensors can be shared freely across threads. ``grad`` is
    populated on leaves (``requires_grad=True`` and no parents) by
    :meth:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _ensure_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    # -- basic properties -------------------------------------------------
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

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad})"

    # -- operator sugar (delegates to the kernel module) ------------------
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    # -- autodiff ----------------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, cotangent=None) -> None:
        """Accumulate ``d(sum(self * cotangent))/d(leaf)`` into leaf ``grad``s."""
        if cotangent is None:
            cot = np.ones_like(self.data)
        else:
            cot = np.asarray(cotangent, dtype=np.float64)
            if cot.shape != self.data.shape:
                raise ShapeError(
                    f"cotangent shape {cot.shape} does not match tensor shape {self.data.shape}"
                )
        grads: dict[int, np.ndarray] = {id(self): cot}
        for node in _reverse_topological(self):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _reverse_topological(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` ordered root-first (reverse topological)."""
    seen: set[int] = set()
    postorder: list[Tensor] = []
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            postorder.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    postorder.reverse()
    return postorder


def make_result(op_name: str, data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    """Wrap a kernel result, attaching the backward closure when needed."""
    _ensure_finite(data, op_name)
    needs_grad = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = needs_grad
    out.grad = None
    if needs_grad:
        out._parents = parents
        out._vjp = vjp
    else:
        out._parents = ()
        out._vjp = None
    return out
