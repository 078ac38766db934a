"""Dense 2-D float64 tensors with reverse-mode differentiation and Adam.

All values are two-dimensional numpy arrays. Primitive ops append their
output node to the active gradient tape (a Wengert list, so creation order
is already a topological order); with no tape active they just compute,
which is the inference path. Every op checks its result for NaN/Inf and
fails loudly instead of propagating garbage.

Typical training step::

    with Tape() as tape:
        loss = reduce_mean(square(model_out - target))
    grads = tape.gradient(loss, params)
    optimizer.step(grads)
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

__all__ = [
    "Tensor", "Tape", "as_tensor", "matmul", "add", "sub", "mul", "scale",
    "relu", "tanh", "sigmoid", "square", "concat", "slice_rows", "slice_cols",
    "tile_rows", "reduce_mean", "reduce_sum", "dropout_mask", "Adam",
    "ACTIVATIONS", "glorot_uniform",
]

_active_tape: "Tape | None" = None


class Tensor:
    """A 2-D float64 value, possibly a node of the active tape's graph."""

    __slots__ = ("data", "grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise ShapeError(
                f"tensor must be 2-D, got shape {arr.shape}"
                + (f" for {name!r}" if name else "")
            )
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(
                "tensor data contains NaN or infinite entries"
                + (f" ({name})" if name else "")
            )
        self.data = arr
        self.grad: np.ndarray | None = None
        self.name = name
        self.op: str | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        tag = self.name or self.op or "const"
        return f"Tensor({tag}, shape={self.shape})"

    # operator sugar; right-hand floats are lifted to 1x1 constants
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    """Lift a scalar or array to a constant Tensor (tensors pass through)."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class Tape:
    """Ordered record of primitive ops for one forward pass.

    Nodes are appended in creation order; the backward pass walks the list
    in reverse, visiting each node exactly once. Parameters never reached
    from the loss get a zero gradient.
    """

    def __init__(self):
        self._nodes: list[Tensor] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def __enter__(self) -> "Tape":
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("a gradient tape is already active")
        _active_tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _active_tape
        _active_tape = None

    def gradient(self, loss: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of a scalar loss with respect to each source tensor."""
        if loss.shape != (1, 1):
            raise ShapeError(f"loss must be 1x1, got {loss.shape}")
        # clear stale grads on everything this pass can touch
        for node in self._nodes:
            node.grad = None
            for parent in node._parents:
                parent.grad = None
        for src in sources:
            src.grad = None
        loss.grad = np.ones((1, 1))
        for node in reversed(self._nodes):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)
        return [
            src.grad if src.grad is not None else np.zeros_like(src.data)
            for src in sources
        ]


def _record(op: str, data: np.ndarray, parents: tuple[Tensor, ...],
            backward: Callable[[np.ndarray], None]) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}: produced NaN or infinite entries")
    out = Tensor(data)
    if _active_tape is not None:
        out.op = op
        out._parents = parents
        out._backward = backward
        _active_tape._nodes.append(out)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape} (inner dimensions differ)")

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _record("matmul", a.data @ b.data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _record("add", a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, -_unbroadcast(g, b.shape))

    return _record("sub", a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product; also the dropout-mask multiply."""
    _check_broadcast("mul", a, b)

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _record("mul", a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python float (not a differentiable operand)."""

    def backward(g):
        _accum(a, g * c)

    return _record("scale", a.data * c, (a,), backward)


def relu(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, g * (a.data > 0.0))

    return _record("relu", np.maximum(a.data, 0.0), (a,), backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - y * y))

    return _record("tanh", y, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # two-branch form avoids overflow warnings for large |x|
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        _accum(a, g * y * (1.0 - y))

    return _record("sigmoid", y, (a,), backward)


def square(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, g * 2.0 * a.data)

    return _record("square", a.data * a.data, (a,), backward)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor] | None] = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "identity": None,
}


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if axis not in (0, 1):
        raise ShapeError(f"concat: axis must be 0 or 1, got {axis}")
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    other = 1 - axis
    ref = tensors[0].shape[other]
    for t in tensors:
        if t.shape[other] != ref:
            raise ShapeError(
                f"concat(axis={axis}): mismatched shapes "
                f"{[t.shape for t in tensors]}"
            )
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            piece = g[lo:hi, :] if axis == 0 else g[:, lo:hi]
            _accum(t, piece)

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _record("concat", data, tuple(tensors), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.rows):
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of range for {a.shape}")

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop, :] = g
        _accum(a, full)

    return _record("slice_rows", a.data[start:stop, :].copy(), (a,), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.cols):
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for {a.shape}")

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accum(a, full)

    return _record("slice_cols", a.data[:, start:stop].copy(), (a,), backward)


def tile_rows(a: Tensor, reps: int) -> Tensor:
    """Stack a single-row tensor `reps` times."""
    if a.rows != 1:
        raise ShapeError(f"tile_rows: expected a single row, got {a.shape}")
    if reps < 1:
        raise ShapeError(f"tile_rows: reps must be >= 1, got {reps}")

    def backward(g):
        _accum(a, g.sum(axis=0, keepdims=True))

    return _record("tile_rows", np.tile(a.data, (reps, 1)), (a,), backward)


def reduce_mean(a: Tensor) -> Tensor:
    size = a.data.size

    def backward(g):
        _accum(a, np.full(a.shape, g[0, 0] / size))

    return _record("reduce_mean", np.array([[a.data.mean()]]), (a,), backward)


def reduce_sum(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, np.full(a.shape, g[0, 0]))

    return _record("reduce_sum", np.array([[a.data.sum()]]), (a,), backward)


def dropout_mask(shape: tuple[int, int], rate: float,
                 rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted-dropout mask: 0 with probability `rate`, else 1/(1-rate).

    In inference mode (training=False) the mask is all ones, so dropped
    units need no rescaling at prediction time.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return Tensor(np.ones(shape))
    keep = 1.0 - rate
    mask = (rng.random(shape) >= rate).astype(np.float64) / keep
    return Tensor(mask)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction and hyperbolic learning-rate decay.

    The effective rate for update number t (steps counted from zero) is
    lr / (1 + decay * t), applied before the bias-corrected moment update.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 5e-5,
                 decay: float = 1e-6, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.decay = decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        """Apply one update in place; `grads` aligns with `params`."""
        if len(grads) != len(self.params):
            raise ValueError(
                f"got {len(grads)} gradients for {len(self.params)} parameters"
            )
        for p, g in zip(self.params, grads):
            if g.shape != p.data.shape:
                raise ShapeError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{p.name or '<unnamed>'} of shape {p.data.shape}"
                )
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(
                    f"non-finite gradient for parameter {p.name or '<unnamed>'}"
                )
        lr_t = self.lr / (1.0 + self.decay * self.step_count)
        t = self.step_count + 1
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / bias1
            v_hat = v / bias2
            p.data -= lr_t * m_hat / (np.sqrt(v_hat) + self.epsilon)
        self.step_count = t


def glorot_uniform(rng: np.random.Generator, rows: int, cols: int,
                   name: str | None = None, fan_in: int | None = None,
                   fan_out: int | None = None) -> Tensor:
    """Glorot/Xavier uniform init: U(-b, b) with b = sqrt(6/(fan_in+fan_out))."""
    fi = rows if fan_in is None else fan_in
    fo = cols if fan_out is None else fan_out
    bound = math.sqrt(6.0 / (fi + fo))
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), name=name)
