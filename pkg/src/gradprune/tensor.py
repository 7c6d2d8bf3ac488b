"""Dense float64 tensors with reverse-mode autodiff on an explicit tape.

Everything here is double precision on purpose: the point of this package is
desk-scale experiments whose results can be checked bit-for-bit, so we trade
speed for exactness. Operations record themselves on the active ``Tape`` in
execution order, and ``backward`` replays that list in reverse. Gradients are
*assigned* (not accumulated) onto ``.grad`` at the end of a backward pass, so
calling ``backward`` twice from the same tape state yields bitwise-identical
gradients.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# The tape currently recording operations, if any. Exactly one may be active;
# training code owns one tape per step.
_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """A float64 ndarray plus a gradient slot.

    ``data`` is always a float64 ndarray (scalars become 0-d arrays). ``grad``
    is ``None`` until a backward pass assigns it. Tensors are created eagerly;
    whether an op is recorded depends on the active tape and ``requires_grad``
    of the inputs.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        """Internal constructor for op outputs: skips the finiteness check so
        a diverging run is caught at the loss (with a step index) rather than
        deep inside the forward pass."""
        out = object.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.requires_grad = False
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

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; all the real work lives in module-level functions.

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis: int | None = None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return reduce_mean(self, axis)


class _Node:
    __slots__ = ("out", "backward_fn")

    def __init__(self, out: Tensor, backward_fn: Callable):
        self.out = out
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations for one forward pass.

    Use as a context manager around the forward computation:

        with Tape() as tape:
            loss = ...
        backward(loss)

    Only one tape may be active at a time; nesting is a bug and raises.
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        """Run reverse-mode accumulation from ``loss`` back to the leaves.

        ``loss`` must be a scalar produced while this tape was active. Each
        tensor's gradient is summed over all its uses in a fixed order and
        then assigned to ``.grad``; repeating the call reproduces the same
        bytes.
        """
        if loss.data.ndim != 0:
            raise ValueError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        produced = any(node.out is loss for node in self._nodes)
        if not produced:
            raise ValueError("loss was not produced on this tape")
        # id -> running gradient; holders keeps the tensors alive and maps back.
        grads: dict[int, np.ndarray] = {id(loss): np.asarray(1.0)}
        holders: dict[int, Tensor] = {id(loss): loss}

        def accumulate(t: Tensor, g: np.ndarray) -> None:
            if not t.requires_grad:
                return
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                holders[key] = t

        for node in reversed(self._nodes):
            g = grads.pop(id(node.out), None)
            holders.pop(id(node.out), None)
            if g is None:
                continue  # this output does not influence the loss
            node.out.grad = g
            node.backward_fn(g, accumulate)
        # Whatever is left was never produced by a node on this tape: leaves.
        for key, g in grads.items():
            holders[key].grad = g


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _record(out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if _ACTIVE_TAPE is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE_TAPE._nodes.append(_Node(out, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ValueError(
            f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None
    out = Tensor._wrap(a.data + b.data)

    def bwd(g, accumulate):
        accumulate(a, _unbroadcast(g, a.data.shape))
        accumulate(b, _unbroadcast(g, b.data.shape))

    return _record(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ValueError(
            f"mul: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None
    out = Tensor._wrap(a.data * b.data)

    def bwd(g, accumulate):
        accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), bwd)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(
            f"matmul: operands must be at least 2-D, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul: inner dimensions disagree, {a.data.shape} @ {b.data.shape}"
        )
    try:
        out_data = a.data @ b.data
    except ValueError:
        raise ValueError(
            f"matmul: batch dimensions do not broadcast, {a.data.shape} @ {b.data.shape}"
        ) from None
    out = Tensor._wrap(out_data)

    def bwd(g, accumulate):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        accumulate(a, _unbroadcast(ga, a.data.shape))
        accumulate(b, _unbroadcast(gb, b.data.shape))

    return _record(out, (a, b), bwd)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor._wrap(np.maximum(x.data, 0.0))

    def bwd(g, accumulate):
        accumulate(x, g * (x.data > 0.0))

    return _record(out, (x,), bwd)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU: x * Phi(x)."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = Tensor._wrap(x.data * cdf)

    def bwd(g, accumulate):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        accumulate(x, g * (cdf + x.data * pdf))

    return _record(out, (x,), bwd)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis: (x - mean) / sqrt(var + eps).

    Affine gain/bias are separate parameters applied by the caller, which
    keeps this primitive easy to check against finite differences.
    """
    x = _as_tensor(x)
    if x.data.ndim < 1:
        raise ValueError("layer_norm: input must have at least one axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = Tensor._wrap(y)

    def bwd(g, accumulate):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        accumulate(x, inv * (g - gm - y * gym))

    return _record(out, (x,), bwd)


def softmax(x: Tensor) -> Tensor:
    """Numerically-stable softmax over the last axis."""
    x = _as_tensor(x)
    if x.data.ndim < 1:
        raise ValueError("softmax: input must have at least one axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor._wrap(y)

    def bwd(g, accumulate):
        dot = (g * y).sum(axis=-1, keepdims=True)
        accumulate(x, y * (g - dot))

    return _record(out, (x,), bwd)


def log_softmax(x: Tensor) -> Tensor:
    """Numerically-stable log-softmax over the last axis."""
    x = _as_tensor(x)
    if x.data.ndim < 1:
        raise ValueError("log_softmax: input must have at least one axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    out = Tensor._wrap(y)

    def bwd(g, accumulate):
        p = np.exp(y)
        accumulate(x, g - p * g.sum(axis=-1, keepdims=True))

    return _record(out, (x,), bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise ValueError(
            f"reshape: cannot reshape {x.data.shape} into {shape}"
        )
    out = Tensor._wrap(x.data.reshape(shape))

    def bwd(g, accumulate):
        accumulate(x, g.reshape(x.data.shape))

    return _record(out, (x,), bwd)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ValueError(
            f"transpose: {axes} is not a permutation of axes for shape {x.data.shape}"
        )
    inverse = tuple(int(i) for i in np.argsort(axes))
    out = Tensor._wrap(x.data.transpose(axes))

    def bwd(g, accumulate):
        accumulate(x, g.transpose(inverse))

    return _record(out, (x,), bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...], :]."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if table.data.ndim != 2:
        raise ValueError(f"embedding: table must be 2-D, got {table.data.shape}")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError(f"embedding: ids must be integers, got dtype {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ValueError(
            f"embedding: ids out of range [0, {table.data.shape[0]}), "
            f"got min {ids.min()} max {ids.max()}"
        )
    out = Tensor._wrap(table.data[ids])

    def bwd(g, accumulate):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        accumulate(table, gt)

    return _record(out, (table,), bwd)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    if axis is not None and not -x.data.ndim <= axis < x.data.ndim:
        raise ValueError(f"sum: axis {axis} out of range for shape {x.data.shape}")
    out = Tensor._wrap(x.data.sum(axis=axis))

    def bwd(g, accumulate):
        if axis is None:
            accumulate(x, np.full(x.data.shape, float(g)))
        else:
            accumulate(x, np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy())

    return _record(out, (x,), bwd)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    if axis is not None and not -x.data.ndim <= axis < x.data.ndim:
        raise ValueError(f"mean: axis {axis} out of range for shape {x.data.shape}")
    out = Tensor._wrap(x.data.mean(axis=axis))
    count = x.data.size if axis is None else x.data.shape[axis]

    def bwd(g, accumulate):
        if axis is None:
            accumulate(x, np.full(x.data.shape, float(g) / count))
        else:
            scaled = np.expand_dims(g, axis) / count
            accumulate(x, np.broadcast_to(scaled, x.data.shape).copy())

    return _record(out, (x,), bwd)
