"""Residual branch refinement and confidence-weighted fusion.

Three branches (interior, exterior, interaction) are refined by FC-ReLU-FC
blocks conditioned on the dense intention token and, for the exterior and
interaction branches, a scalar speed summary.  Each branch then yields class
logits and a confidence score; a softmax over the three scores weights the
joint prediction, so the joint logits always stay inside the convex hull of
the branch logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import FeedForward, glorot, linear
from .params import ParamStore
from .tensor import Tensor, concat, softmax

BRANCHES = ("in", "out", "ctx")


@dataclass
class FsnConfig:
    use_speed: bool = True
    hidden_dim: int = 0  # 0 -> 2 * d_model
    num_classes: int = 5
    classifier_bias: bool = True

    def __post_init__(self):
        if self.hidden_dim < 0:
            raise ConfigError("hidden_dim must be >= 0")


@dataclass
class FsnOutput:
    r_in: Tensor
    r_out: Tensor
    r_ctx: Tensor
    branch_logits: dict[str, Tensor]
    weights: Tensor
    joint_logits: Tensor
    scores: Tensor


class FeatureSynthesis:
    """Branch refinement + adaptive fusion; parameters live under `fsn.*`."""

    def __init__(self, store: ParamStore, d_model: int, cfg: FsnConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.d_model = d_model
        hidden = cfg.hidden_dim if cfg.hidden_dim else 2 * d_model
        speed_dim = 1 if cfg.use_speed else 0
        self.ffn_in = FeedForward(store, "fsn.in.ffn", 2 * d_model, hidden, d_model, rng)
        self.ffn_out = FeedForward(store, "fsn.out.ffn", 2 * d_model + speed_dim, hidden, d_model, rng)
        self.ffn_ctx = FeedForward(store, "fsn.ctx.ffn", 3 * d_model + speed_dim, hidden, d_model, rng)
        self.conf = {b: store.register(f"fsn.{b}.conf.u", Tensor(glorot(rng, 1, d_model))) for b in BRANCHES}
        self.cls_w = {b: store.register(f"fsn.{b}.cls.w", Tensor(glorot(rng, cfg.num_classes, d_model))) for b in BRANCHES}
        self.cls_b = (
            {b: store.register(f"fsn.{b}.cls.b", Tensor(np.zeros(cfg.num_classes))) for b in BRANCHES}
            if cfg.classifier_bias
            else {b: None for b in BRANCHES}
        )

    def refine_branches(
        self, h_in: Tensor, h_out: Tensor, z_intent: Tensor, speed: Tensor | None = None
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Residual FC-ReLU-FC refinement of the three branch features.

        Speed conditions only the exterior and interaction branches; the
        interior branch sees driver state and intention alone.
        """
        h_in, h_out, z_intent = (Tensor.as_tensor(t) for t in (h_in, h_out, z_intent))
        if self.cfg.use_speed:
            if speed is None:
                raise ConfigError("this configuration requires a speed input")
            speed = Tensor.as_tensor(speed)
            if speed.ndim != 2 or speed.shape[1] != 1:
                raise ShapeError(f"speed must be (B, 1), got {speed.shape}")
            out_parts = [h_out, z_intent, speed]
            ctx_parts = [h_in, h_out, z_intent, speed]
        else:
            out_parts = [h_out, z_intent]
            ctx_parts = [h_in, h_out, z_intent]
        r_in = self.ffn_in(concat([h_in, z_intent], axis=-1)) + h_in
        r_out = self.ffn_out(concat(out_parts, axis=-1)) + h_out
        r_ctx = self.ffn_ctx(concat(ctx_parts, axis=-1)) + h_in + h_out
        return r_in, r_out, r_ctx

    def fuse(self, r_in: Tensor, r_out: Tensor, r_ctx: Tensor) -> FsnOutput:
        """Confidence-weighted combination of the three branch classifiers."""
        refined = {"in": r_in, "out": r_out, "ctx": r_ctx}
        scores = concat([linear(refined[b], self.conf[b]) for b in BRANCHES], axis=-1)
        weights = softmax(scores, axis=-1)
        branch_logits = {b: linear(refined[b], self.cls_w[b], self.cls_b[b]) for b in BRANCHES}
        joint = None
        for i, b in enumerate(BRANCHES):
            term = weights[:, i : i + 1] * branch_logits[b]
            joint = term if joint is None else joint + term
        return FsnOutput(
            r_in=r_in,
            r_out=r_out,
            r_ctx=r_ctx,
            branch_logits=branch_logits,
            weights=weights,
            joint_logits=joint,
            scores=scores,
        )

    def __call__(self, h_in: Tensor, h_out: Tensor, z_intent: Tensor, speed: Tensor | None = None) -> FsnOutput:
        return self.fuse(*self.refine_branches(h_in, h_out, z_intent, speed))
