"""Dense tensors with reverse-mode automatic differentiation.

The engine is numpy-backed and deliberately small: the handful of primitives
below (elementwise arithmetic, matmul, reductions, shape ops, a fused masked
softmax and a fused cross-entropy) are enough to express every layer in the
model.  Each operation records a backward closure; ``Tensor.backward`` runs
the closures in reverse topological order.

Every freshly created tensor is checked for NaN/Inf and a violation raises
``NumericError`` immediately, so a divergence is caught at the operation that
produced it rather than epochs later.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import LabelError, MaskError, NumericError, ShapeError

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True
_FINITE_CHECKS = True


def set_default_dtype(dtype) -> None:
    """Set the dtype used for all new tensors (float64 or float32)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ShapeError(f"unsupported compute dtype {dtype}; use float64 or float32")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def finite_checks(enabled: bool):
    """Toggle the NaN/Inf guard on tensor creation (on by default)."""
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = enabled
    try:
        yield
    finally:
        _FINITE_CHECKS = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype != _DEFAULT_DTYPE:
            arr = arr.astype(_DEFAULT_DTYPE)
        if _FINITE_CHECKS and not np.isfinite(arr).all():
            raise NumericError("tensor contains NaN/Inf")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction -----------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=track)
        if track:
            out._parents = parents
            out._backward = backward
        return out

    @staticmethod
    def as_tensor(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- introspection ----------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __float__(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"cannot convert tensor of shape {self.shape} to float")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = Tensor.as_tensor(other)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._result(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return Tensor._result(-self.data, (self,), backward)

    def __sub__(self, other):
        other = Tensor.as_tensor(other)
        out_data = self.data - other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.data.shape))

        return Tensor._result(out_data, (self, other), backward)

    def __rsub__(self, other):
        return Tensor.as_tensor(other) - self

    def __mul__(self, other):
        other = Tensor.as_tensor(other)
        a, b = self.data, other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * b, a.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * a, b.shape))

        return Tensor._result(a * b, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor.as_tensor(other)
        a, b = self.data, other.data
        out_data = a / b

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / b, a.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g * a / (b * b), b.shape))

        return Tensor._result(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return Tensor.as_tensor(other) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise ShapeError("only scalar exponents are supported")
        a = self.data
        out_data = a**exponent

        def backward(g):
            self._accumulate(g * exponent * a ** (exponent - 1))

        return Tensor._result(out_data, (self,), backward)

    def __matmul__(self, other):
        other = Tensor.as_tensor(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul operands must have at least 2 dimensions")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul mismatch: {a.shape} @ {b.shape}")
        out_data = a @ b

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape))

        return Tensor._result(out_data, (self, other), backward)

    # -- elementwise functions ----------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            self._accumulate(g * out_data)

        return Tensor._result(out_data, (self,), backward)

    def log(self):
        out_data = np.log(self.data)

        def backward(g):
            self._accumulate(g / self.data)

        return Tensor._result(out_data, (self,), backward)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def backward(g):
            self._accumulate(g * 0.5 / out_data)

        return Tensor._result(out_data, (self,), backward)

    def relu(self):
        positive = self.data > 0
        out_data = np.where(positive, self.data, 0.0)

        def backward(g):
            self._accumulate(g * positive)

        return Tensor._result(out_data, (self,), backward)

    def sigmoid(self):
        x = self.data
        out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        def backward(g):
            self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._result(out_data, (self,), backward)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def backward(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accumulate(np.broadcast_to(gg, shape).copy())

        return Tensor._result(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.data.shape
        out_data = self.data.reshape(shape)

        def backward(g):
            self._accumulate(g.reshape(old_shape))

        return Tensor._result(out_data, (self,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        out_data = self.data.transpose(axes)

        def backward(g):
            self._accumulate(g.transpose(inverse))

        return Tensor._result(out_data, (self,), backward)

    def __getitem__(self, index):
        out_data = self.data[index]
        shape = self.data.shape

        def backward(g):
            buf = np.zeros(shape, dtype=g.dtype)
            buf[index] += g
            self._accumulate(buf)

        return Tensor._result(out_data, (self,), backward)

    # -- backward pass -----------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode gradient of this scalar w.r.t. all graph leaves."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar tensor")
        if not self.requires_grad:
            raise ShapeError("backward() on a tensor that does not require grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


# -- free functions ---------------------------------------------------------


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along `axis` with gradient routing back to each operand."""
    tensors = [Tensor.as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        moved = np.moveaxis(g, axis, 0)
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(np.moveaxis(moved[lo:hi], 0, axis))

    return Tensor._result(out_data, tuple(tensors), backward)


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax, optionally masked.

    `mask` is boolean, broadcastable to `x`, with True marking positions that
    may receive weight; masked positions get exactly zero.  A query row with
    no permitted position raises MaskError.  Max-subtraction keeps the
    exponentials in range, so no non-finite intermediate is ever materialised
    in a tensor.
    """
    x = Tensor.as_tensor(x)
    scores = x.data
    if not np.isfinite(scores).all():
        raise NumericError("softmax input contains NaN/Inf")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=axis).all():
            raise MaskError("softmax mask leaves a row with no permitted key")
        mask = np.broadcast_to(mask, scores.shape)
        scores = np.where(mask, scores, -np.inf)
    shifted = scores - scores.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out_data = exp / exp.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        x._accumulate((g - inner) * out_data)

    return Tensor._result(out_data, (x,), backward)


def cross_entropy(logits: Tensor, labels, class_weights: np.ndarray | None = None) -> Tensor:
    """Mean cross-entropy of integer labels under softmax(logits).

    With `class_weights` (one positive weight per class) the per-sample terms
    are weighted and normalised by the total weight, so the unweighted case is
    recovered when all weights are equal.
    """
    logits = Tensor.as_tensor(logits)
    z = logits.data
    if z.ndim != 2:
        raise ShapeError(f"cross_entropy expects (batch, classes) logits, got {z.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, m = z.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise LabelError(f"labels must lie in [0, {m})")

    shift = z.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(z - shift).sum(axis=1, keepdims=True)) + shift
    nll = log_z[:, 0] - z[np.arange(n), labels]
    if class_weights is None:
        weights = np.ones(n, dtype=z.dtype)
    else:
        class_weights = np.asarray(class_weights, dtype=z.dtype)
        weights = class_weights[labels]
    total_weight = weights.sum()
    out_data = np.asarray((nll * weights).sum() / total_weight)

    def backward(g):
        probs = np.exp(z - log_z)
        probs[np.arange(n), labels] -= 1.0
        logits._accumulate(probs * (g * weights / total_weight)[:, None])

    return Tensor._result(out_data, (logits,), backward)


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train mode zeroes with probability `rate` and rescales
    survivors by 1/(1-rate); eval mode is the identity (the same object)."""
    from .errors import ConfigError

    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    x = Tensor.as_tensor(x)
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("train-mode dropout requires an explicit rng")
    keep = rng.random(x.data.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    factor = keep * scale

    def backward(g):
        x._accumulate(g * factor)

    return Tensor._result(x.data * factor, (x,), backward)
