"""Per-stream temporal encoder.

Raw per-frame feature vectors (interior or exterior, optionally with a speed
channel appended) are linearly projected to the model width, given fixed
sinusoidal positions, and refined by a stack of pre-norm transformer blocks.
Self-attention sees the whole chunk: the full window precedes the prediction
instant, so no causal mask is needed here; cross-stream precedence is
enforced later by the fusion stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .nn import FeedForward, Linear, MultiHeadAttention, RMSNorm, positional_encoding
from .params import ParamStore
from .tensor import Tensor, dropout


@dataclass
class EncoderConfig:
    d_model: int = 64
    heads: int = 4
    layers: int = 2
    ffn_dim: int = 0  # 0 -> 2 * d_model
    dropout_rate: float = 0.1
    use_speed: bool = True
    d_in_interior: int = 64
    d_in_exterior: int = 32

    def __post_init__(self):
        if self.ffn_dim == 0:
            self.ffn_dim = 2 * self.d_model
        if self.d_model % self.heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.layers < 1:
            raise ConfigError("encoder needs at least one layer")
        if self.ffn_dim < self.d_model:
            raise ConfigError("ffn_dim must be >= d_model")

    def input_dim(self, stream: str) -> int:
        base = {"interior": self.d_in_interior, "exterior": self.d_in_exterior}[stream]
        return base + (1 if self.use_speed else 0)


class _EncoderBlock:
    def __init__(self, store: ParamStore, name: str, cfg: EncoderConfig, rng: np.random.Generator):
        self.norm1 = RMSNorm(store, f"{name}.norm1")
        self.attn = MultiHeadAttention(store, f"{name}.attn", cfg.d_model, cfg.heads, rng)
        self.norm2 = RMSNorm(store, f"{name}.norm2")
        self.ffn = FeedForward(store, f"{name}.ffn", cfg.d_model, cfg.ffn_dim, cfg.d_model, rng)
        self.rate = cfg.dropout_rate

    def __call__(self, x: Tensor, mode: str, rng) -> Tensor:
        normed = self.norm1(x)
        x = x + dropout(self.attn(normed, normed, normed), self.rate, mode, rng)
        x = x + dropout(self.ffn(self.norm2(x)), self.rate, mode, rng)
        return x


class StreamEncoder:
    """One stream's projection + positional encoding + transformer stack.

    Parameters live under `enc.in.*` or `enc.out.*` depending on `stream`.
    """

    def __init__(self, store: ParamStore, cfg: EncoderConfig, stream: str, rng: np.random.Generator):
        if stream not in ("interior", "exterior"):
            raise ConfigError(f"unknown stream {stream!r}")
        self.cfg = cfg
        self.stream = stream
        prefix = "enc.in" if stream == "interior" else "enc.out"
        self.proj = Linear(store, f"{prefix}.proj", cfg.input_dim(stream), cfg.d_model, rng)
        self.blocks = [_EncoderBlock(store, f"{prefix}.block{i}", cfg, rng) for i in range(cfg.layers)]
        self.final_norm = RMSNorm(store, f"{prefix}.norm")
        self._pe_cache: dict[int, np.ndarray] = {}

    def __call__(self, raw: Tensor, mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
        raw = Tensor.as_tensor(raw)
        if raw.ndim != 3:
            raise ShapeError(f"encoder input must be (B, T, d_in), got {raw.shape}")
        b, t, d_in = raw.shape
        if t == 0:
            raise DataError("cannot encode an empty sequence (T=0)")
        expected = self.cfg.input_dim(self.stream)
        if d_in != expected:
            raise ShapeError(f"{self.stream} stream expects {expected} input channels, got {d_in}")
        if t not in self._pe_cache:
            self._pe_cache[t] = positional_encoding(t, self.cfg.d_model)
        x = self.proj(raw) + Tensor(self._pe_cache[t])
        x = dropout(x, self.cfg.dropout_rate, mode, rng)
        for block in self.blocks:
            x = block(x, mode, rng)
        return self.final_norm(x)
