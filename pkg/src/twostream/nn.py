"""Layers used throughout the model: affine maps, RMS normalisation,
multi-head attention, and the two-layer feedforward block.

Functional forms operate on explicit weight tensors; the small layer classes
below them create their weights in a ParamStore under a dotted prefix, which
fixes both the checkpoint naming contract and the initialisation order.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .params import ParamStore
from .tensor import Tensor, softmax


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x @ W^T (+ b) over the trailing dimension; weight is (d_out, d_in)."""
    x = Tensor.as_tensor(x)
    weight = Tensor.as_tensor(weight)
    if x.shape[-1] != weight.shape[-1]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} does not match weight {weight.shape}")
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, -1)
    out = x @ weight.transpose(1, 0)
    if bias is not None:
        out = out + bias
    return out.reshape(out.shape[1:]) if squeeze else out


def rms_norm(x: Tensor, scale: Tensor, eps: float = 1e-6) -> Tensor:
    """x * s / sqrt(mean(x_d^2) + eps) over the trailing feature dimension.

    `scale` is a single learnable scalar, so the RMS of every output vector
    equals |s| whenever eps is negligible against the input RMS.
    """
    x = Tensor.as_tensor(x)
    mean_square = (x * x).mean(axis=-1, keepdims=True)
    return x * scale / (mean_square + eps).sqrt()


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Fixed sinusoid table: pe[t, 2i] = sin(t / 10000^(2i/dim)), odd columns cos."""
    if dim % 2 != 0:
        raise ConfigError(f"positional encoding needs an even dimension, got {dim}")
    positions = np.arange(length, dtype=np.float64)[:, None]
    freqs = np.exp(-np.log(10000.0) * np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * freqs)
    table[:, 1::2] = np.cos(positions * freqs)
    return table


def multi_head_attention(
    query: Tensor,
    key: Tensor,
    value: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    heads: int,
    mask: np.ndarray | None = None,
    need_weights: bool = False,
):
    """Scaled dot-product attention with `heads` parallel heads.

    Inputs are (B, L, D) or unbatched (L, D).  Projections are full D x D
    maps read head-wise after a reshape; head outputs are concatenated and
    mapped back through `wo`.  `mask` is boolean (Lq, Lk) with True marking
    keys a query may attend to; masked weights are exactly zero.

    Returns the attended tensor, and with `need_weights` also the detached
    weight array of shape (B, heads, Lq, Lk).
    """
    query, key, value = (Tensor.as_tensor(t) for t in (query, key, value))
    unbatched = query.ndim == 2
    if unbatched:
        query, key, value = (t.reshape(1, *t.shape) for t in (query, key, value))
    if query.ndim != 3 or key.ndim != 3 or value.ndim != 3:
        raise ShapeError("attention inputs must be (B, L, D) or (L, D)")
    b, lq, d = query.shape
    lk = key.shape[1]
    if key.shape != (b, lk, d) or value.shape != (b, lk, d):
        raise ShapeError(f"attention shape mismatch: q={query.shape} k={key.shape} v={value.shape}")
    if d % heads != 0:
        raise ConfigError(f"model dim {d} not divisible by {heads} heads")
    dk = d // heads

    def split_heads(t: Tensor, length: int) -> Tensor:
        return t.reshape(b, length, heads, dk).transpose(0, 2, 1, 3)

    q = split_heads(linear(query, wq), lq)
    k = split_heads(linear(key, wk), lk)
    v = split_heads(linear(value, wv), lk)

    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dk))
    weights = softmax(scores, axis=-1, mask=mask)
    attended = (weights @ v).transpose(0, 2, 1, 3).reshape(b, lq, d)
    out = linear(attended, wo)
    if unbatched:
        out = out.reshape(lq, d)
    if need_weights:
        return out, weights.data.copy()
    return out


def glorot(rng: np.random.Generator, d_out: int, d_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_out, d_in))


class Linear:
    """Affine layer with weights registered as `<name>.w` / `<name>.b`."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = store.register(f"{name}.w", Tensor(glorot(rng, d_out, d_in)))
        self.bias = store.register(f"{name}.b", Tensor(np.zeros(d_out))) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class RMSNorm:
    """Learnable-scalar RMS normalisation (parameter `<name>.s`)."""

    def __init__(self, store: ParamStore, name: str, eps: float = 1e-6):
        self.scale = store.register(f"{name}.s", Tensor(np.ones(1)))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return rms_norm(x, self.scale, self.eps)


class FeedForward:
    """Two affine layers with a ReLU in between (`w1/b1` then `w2/b2`)."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator):
        self.w1 = store.register(f"{name}.w1", Tensor(glorot(rng, d_hidden, d_in)))
        self.b1 = store.register(f"{name}.b1", Tensor(np.zeros(d_hidden)))
        self.w2 = store.register(f"{name}.w2", Tensor(glorot(rng, d_out, d_hidden)))
        self.b2 = store.register(f"{name}.b2", Tensor(np.zeros(d_out)))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(linear(x, self.w1, self.b1).relu(), self.w2, self.b2)


class MultiHeadAttention:
    """Attention layer owning wq/wk/wv/wo under the given prefix."""

    def __init__(self, store: ParamStore, name: str, d_model: int, heads: int, rng: np.random.Generator):
        if d_model % heads != 0:
            raise ConfigError(f"model dim {d_model} not divisible by {heads} heads")
        self.heads = heads
        self.wq = store.register(f"{name}.wq", Tensor(glorot(rng, d_model, d_model)))
        self.wk = store.register(f"{name}.wk", Tensor(glorot(rng, d_model, d_model)))
        self.wv = store.register(f"{name}.wv", Tensor(glorot(rng, d_model, d_model)))
        self.wo = store.register(f"{name}.wo", Tensor(glorot(rng, d_model, d_model)))

    def __call__(self, query, key, value, mask=None, need_weights: bool = False):
        return multi_head_attention(
            query, key, value, self.wq, self.wk, self.wv, self.wo, self.heads, mask=mask, need_weights=need_weights
        )
