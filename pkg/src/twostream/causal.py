"""Causal residual extraction from the fused streams.

For the final chunk frame, each stream's attention over the counterpart's
preceding frames is contrasted with the attention it would have produced had
the counterpart shown no variation at all (every key replaced by its mean).
The difference isolates the direct effect of observed variation; it is then
orthogonalised against the mean vector to strip baseline-aligned components,
scaled by a learned sigmoid gate, and added back onto the stream's final
frame.  A light classification head on the exterior summary yields a coarse
intention distribution that is re-embedded as a dense token for downstream
fusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .nn import MultiHeadAttention, glorot, linear
from .params import ParamStore
from .tensor import Tensor, softmax

BASELINE_SCOPES = ("batch-and-time", "per-sample-time")
GATE_MODES = ("elementwise", "scalar")
ORTH_TARGETS = ("counterpart", "pooled")


@dataclass
class CpeConfig:
    heads: int = 4
    eps_orth: float = 1e-6
    baseline_scope_train: str = "batch-and-time"
    baseline_scope_eval: str = "per-sample-time"
    final_step_only: bool = True
    num_classes: int = 5
    gate_mode: str = "elementwise"
    orth_target: str = "counterpart"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        for scope in (self.baseline_scope_train, self.baseline_scope_eval):
            if scope not in BASELINE_SCOPES:
                raise ConfigError(f"baseline scope must be one of {BASELINE_SCOPES}, got {scope!r}")
        if self.gate_mode not in GATE_MODES:
            raise ConfigError(f"gate_mode must be one of {GATE_MODES}, got {self.gate_mode!r}")
        if self.orth_target not in ORTH_TARGETS:
            raise ConfigError(f"orth_target must be one of {ORTH_TARGETS}, got {self.orth_target!r}")

    def scope_for(self, mode: str) -> str:
        return self.baseline_scope_train if mode == "train" else self.baseline_scope_eval


@dataclass
class CpeOutput:
    h_in: Tensor
    h_out: Tensor
    delta_in: Tensor
    delta_out: Tensor
    gate_in: Tensor
    gate_out: Tensor
    xi: Tensor
    z_intent: Tensor
    intent_logits: Tensor
    residual_history: dict | None = None


def baseline_mean(x: Tensor, scope: str) -> Tensor:
    """Neutral reference for the counterfactual: "batch-and-time" averages
    over both batch and time (one shared D-vector), "per-sample-time" over
    time only (one vector per sample, no cross-sample coupling)."""
    x = Tensor.as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"baseline_mean expects (B, T, D), got {x.shape}")
    if scope == "batch-and-time":
        return x.mean(axis=(0, 1))
    if scope == "per-sample-time":
        return x.mean(axis=1)
    raise ConfigError(f"unknown baseline scope {scope!r}")


def orthogonalize(delta: Tensor, baseline: Tensor, eps: float = 1e-6) -> Tensor:
    """Remove the baseline-aligned component row-wise:
    delta - (<delta, b> / (|b|^2 + eps)) * b."""
    delta = Tensor.as_tensor(delta)
    baseline = Tensor.as_tensor(baseline)
    b = baseline if baseline.ndim == 2 else baseline.reshape(1, -1)
    coeff = (delta * b).sum(axis=-1, keepdims=True) / ((b * b).sum(axis=-1, keepdims=True) + eps)
    return delta - coeff * b


class CausalPatternExtractor:
    """Counterfactual-contrast module; parameters live under `cpe.*`."""

    def __init__(self, store: ParamStore, d_model: int, cfg: CpeConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.d_model = d_model
        self.attn_in = MultiHeadAttention(store, "cpe.in.attn", d_model, cfg.heads, rng)
        self.attn_out = MultiHeadAttention(store, "cpe.out.attn", d_model, cfg.heads, rng)
        gate_out_dim = d_model if cfg.gate_mode == "elementwise" else 1
        self.gate_w_in = store.register("cpe.in.gate.w", Tensor(glorot(rng, gate_out_dim, d_model)))
        self.gate_b_in = store.register("cpe.in.gate.b", Tensor(np.zeros(gate_out_dim)))
        self.gate_w_out = store.register("cpe.out.gate.w", Tensor(glorot(rng, gate_out_dim, d_model)))
        self.gate_b_out = store.register("cpe.out.gate.b", Tensor(np.zeros(gate_out_dim)))
        self.w_intent = store.register("cpe.intent.w", Tensor(glorot(rng, cfg.num_classes, d_model)))
        self.w_proj = store.register("cpe.proj.w", Tensor(glorot(rng, d_model, cfg.num_classes)))

    # -- residuals ---------------------------------------------------------

    def _residual_at(self, attn: MultiHeadAttention, queries: Tensor, keys: Tensor, baseline: Tensor, t: int) -> Tensor:
        """Observed-minus-counterfactual attended output for query frame t
        (0-indexed) against the counterpart's frames < t."""
        q = queries[:, t : t + 1, :]
        observed = attn(q, keys[:, :t, :], keys[:, :t, :])
        b = baseline
        if b.ndim == 1:
            b = b.reshape(1, 1, -1) * Tensor(np.ones((q.shape[0], 1, 1)))
        else:
            b = b.reshape(b.shape[0], 1, b.shape[1])
        counterfactual = attn(q, b, b)
        return (observed - counterfactual).reshape(q.shape[0], self.d_model)

    def causal_residual(self, x_in: Tensor, x_out: Tensor, mode: str = "eval", collect_history: bool = False):
        """Final-step residuals for both streams.

        Requires T >= 2 so the prefix of preceding frames is non-empty.  With
        `collect_history` (diagnostics only) residuals at every t >= 1 are
        recorded as well; the returned pair is always the final-step one.
        """
        x_in, x_out = Tensor.as_tensor(x_in), Tensor.as_tensor(x_out)
        if x_in.shape != x_out.shape:
            raise ShapeError(f"stream shapes differ: {x_in.shape} vs {x_out.shape}")
        t_total = x_in.shape[1]
        if t_total < 2:
            raise DataError(f"causal residual needs T >= 2, got T={t_total}")
        scope = self.cfg.scope_for(mode)
        base_out = baseline_mean(x_out, scope)
        base_in = baseline_mean(x_in, scope)

        last = t_total - 1
        delta_in = self._residual_at(self.attn_in, x_in, x_out, base_out, last)
        delta_out = self._residual_at(self.attn_out, x_out, x_in, base_in, last)

        history = None
        if collect_history and not self.cfg.final_step_only:
            history = {"in": [], "out": []}
            for step in range(1, t_total):
                history["in"].append(self._residual_at(self.attn_in, x_in, x_out, base_out, step).data.copy())
                history["out"].append(self._residual_at(self.attn_out, x_out, x_in, base_in, step).data.copy())
        return delta_in, delta_out, base_in, base_out, history

    # -- gating and intention ------------------------------------------------

    def causal_gate(self, x_last: Tensor, delta_orth: Tensor, which: str) -> tuple[Tensor, Tensor]:
        """h = x_last + g * delta_orth with g = sigmoid(linear(delta_orth))."""
        w, b = (self.gate_w_in, self.gate_b_in) if which == "in" else (self.gate_w_out, self.gate_b_out)
        g = linear(delta_orth, w, b).sigmoid()
        return x_last + g * delta_orth, g

    def intention_head(self, h_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Coarse class distribution from the exterior summary, plus its dense
        re-embedding used as a global semantic token."""
        intent_logits = linear(h_out, self.w_intent)
        xi = softmax(intent_logits, axis=-1)
        z_intent = linear(xi, self.w_proj)
        return xi, z_intent, intent_logits

    def __call__(self, x_in: Tensor, x_out: Tensor, mode: str = "eval", collect_history: bool = False) -> CpeOutput:
        delta_in, delta_out, base_in, base_out, history = self.causal_residual(
            x_in, x_out, mode=mode, collect_history=collect_history
        )
        if self.cfg.orth_target == "pooled":
            pooled = (base_in + base_out) * 0.5
            ref_for_in = ref_for_out = pooled
        else:
            # Each residual is orthogonalised against the baseline that
            # produced its own counterfactual.
            ref_for_in, ref_for_out = base_out, base_in
        delta_in = orthogonalize(delta_in, ref_for_in, self.cfg.eps_orth)
        delta_out = orthogonalize(delta_out, ref_for_out, self.cfg.eps_orth)

        x_in_last = x_in[:, -1, :]
        x_out_last = x_out[:, -1, :]
        h_in, gate_in = self.causal_gate(x_in_last, delta_in, "in")
        h_out, gate_out = self.causal_gate(x_out_last, delta_out, "out")
        xi, z_intent, intent_logits = self.intention_head(h_out)
        return CpeOutput(
            h_in=h_in,
            h_out=h_out,
            delta_in=delta_in,
            delta_out=delta_out,
            gate_in=gate_in,
            gate_out=gate_out,
            xi=xi,
            z_intent=z_intent,
            intent_logits=intent_logits,
            residual_history=history,
        )
