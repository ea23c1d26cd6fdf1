"""Cross-stream fusion under a strict one-frame delay.

Each stream's queries attend to the *other* stream shifted back by one frame,
so information flows exterior -> interior (and vice versa) only with a lag:
position t may use the counterpart's frames <= t-1, never t or later.  The
attended result is channel-gated by a sigmoid bottleneck, RMS-normalised and
dropout-regularised.

`attention_mode` selects the ablation variants:
  * "bda"        - delayed keys, causal prefix mask (default)
  * "single_key" - delayed keys, each query sees exactly the one frame t-1
  * "plain"      - undelayed keys, full mask (no temporal precedence)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import MultiHeadAttention, RMSNorm, glorot, linear
from .params import ParamStore
from .tensor import Tensor, concat, dropout

ATTENTION_MODES = ("bda", "single_key", "plain")


@dataclass
class RsfConfig:
    heads: int = 4
    gate_reduction: int = 4
    dropout_rate: float = 0.1
    causal_mask: bool = True
    attention_mode: str = "bda"

    def __post_init__(self):
        if self.gate_reduction < 1:
            raise ConfigError("gate_reduction must be >= 1")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError(f"attention_mode must be one of {ATTENTION_MODES}, got {self.attention_mode!r}")


@dataclass
class RsfOutput:
    x_in: Tensor
    x_out: Tensor
    gates_in: Tensor
    gates_out: Tensor
    attn_in: np.ndarray | None = None
    attn_out: np.ndarray | None = None


def delay_shift(features: Tensor) -> Tensor:
    """Shift one frame into the past: out[:, 0] is the zero vector and
    out[:, t] = features[:, t-1] for t >= 1."""
    features = Tensor.as_tensor(features)
    if features.ndim != 3:
        raise ShapeError(f"delay_shift expects (B, T, D), got {features.shape}")
    b, t, d = features.shape
    zero = Tensor(np.zeros((b, 1, d)))
    if t == 1:
        return zero
    return concat([zero, features[:, : t - 1, :]], axis=1)


def _prefix_mask(t: int) -> np.ndarray:
    # Delayed position j holds the counterpart's original frame j-1 (position
    # 0 holds the zero vector), so allowing j <= i gives query i access to
    # original frames <= i-1 only.
    return np.tril(np.ones((t, t), dtype=bool))


def _single_key_mask(t: int) -> np.ndarray:
    return np.eye(t, dtype=bool)


def channel_gate(h: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> tuple[Tensor, Tensor]:
    """Sigmoid bottleneck gate: g = sigma(W2 relu(W1 h + b1) + b2), applied
    element-wise as g * h.  Returns (gated, g)."""
    g = linear(linear(h, w1, b1).relu(), w2, b2).sigmoid()
    return g * h, g


class _GatedStream:
    """One direction of the fusion: attention + channel gate + RMS norm."""

    def __init__(self, store: ParamStore, name: str, d_model: int, cfg: RsfConfig, rng: np.random.Generator):
        hidden = max(1, d_model // cfg.gate_reduction)
        self.attn = MultiHeadAttention(store, f"{name}.attn", d_model, cfg.heads, rng)
        self.gate_w1 = store.register(f"{name}.gate.w1", Tensor(glorot(rng, hidden, d_model)))
        self.gate_b1 = store.register(f"{name}.gate.b1", Tensor(np.zeros(hidden)))
        self.gate_w2 = store.register(f"{name}.gate.w2", Tensor(glorot(rng, d_model, hidden)))
        self.gate_b2 = store.register(f"{name}.gate.b2", Tensor(np.zeros(d_model)))
        self.norm = RMSNorm(store, f"{name}.norm")

    def gate(self, h: Tensor) -> tuple[Tensor, Tensor]:
        return channel_gate(h, self.gate_w1, self.gate_b1, self.gate_w2, self.gate_b2)


class ReciprocalShiftFusion:
    """Bidirectional delayed cross-attention with channel calibration.

    Parameters live under `rsf.in.*` (interior queries against delayed
    exterior) and `rsf.out.*` (the mirror image).
    """

    def __init__(self, store: ParamStore, d_model: int, cfg: RsfConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.d_model = d_model
        self.stream_in = _GatedStream(store, "rsf.in", d_model, cfg, rng)
        self.stream_out = _GatedStream(store, "rsf.out", d_model, cfg, rng)

    def _mask(self, t: int) -> np.ndarray | None:
        mode = self.cfg.attention_mode
        if mode == "plain":
            return None
        if mode == "single_key":
            return _single_key_mask(t)
        return _prefix_mask(t) if self.cfg.causal_mask else None

    def bda(self, f_in: Tensor, f_out: Tensor, need_weights: bool = False):
        """Paired cross-attentions against the one-frame-delayed counterpart."""
        f_in, f_out = Tensor.as_tensor(f_in), Tensor.as_tensor(f_out)
        if f_in.shape != f_out.shape:
            raise ShapeError(f"stream shapes differ: {f_in.shape} vs {f_out.shape}")
        t = f_in.shape[1]
        if self.cfg.attention_mode == "plain":
            keys_for_in, keys_for_out = f_out, f_in
        else:
            keys_for_in, keys_for_out = delay_shift(f_out), delay_shift(f_in)
        mask = self._mask(t)
        h_in = self.stream_in.attn(f_in, keys_for_in, keys_for_in, mask=mask, need_weights=need_weights)
        h_out = self.stream_out.attn(f_out, keys_for_out, keys_for_out, mask=mask, need_weights=need_weights)
        if need_weights:
            (h_in, w_in), (h_out, w_out) = h_in, h_out
            return h_in, h_out, w_in, w_out
        return h_in, h_out, None, None

    def __call__(
        self,
        f_in: Tensor,
        f_out: Tensor,
        mode: str = "eval",
        rng: np.random.Generator | None = None,
        need_weights: bool = False,
    ) -> RsfOutput:
        h_in, h_out, w_in, w_out = self.bda(f_in, f_out, need_weights=need_weights)
        gated_in, g_in = self.stream_in.gate(h_in)
        gated_out, g_out = self.stream_out.gate(h_out)
        x_in = dropout(self.stream_in.norm(gated_in), self.cfg.dropout_rate, mode, rng)
        x_out = dropout(self.stream_out.norm(gated_out), self.cfg.dropout_rate, mode, rng)
        return RsfOutput(x_in=x_in, x_out=x_out, gates_in=g_in, gates_out=g_out, attn_in=w_in, attn_out=w_out)
