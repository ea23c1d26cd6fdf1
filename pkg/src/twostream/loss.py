"""Composite training objective.

The main term averages the cross-entropies of the per-branch logits and the
joint logits; a separately weighted term supervises the coarse intention
logits.  At weight zero the intention term is reported but structurally
excluded from the total, so no gradient reaches the intention classifier
through that path (it still receives gradient through the dense intention
token feeding the synthesis stage).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import ForwardTrace
from .tensor import Tensor, cross_entropy

DEFAULT_MAIN_TERMS = ("in", "out", "ctx", "joint")


@dataclass
class LossBreakdown:
    total: Tensor
    main: Tensor
    intention: Tensor | None
    per_branch: dict[str, float]
    alpha: float

    @property
    def main_value(self) -> float:
        return float(self.main)

    @property
    def intention_value(self) -> float:
        return float(self.intention) if self.intention is not None else 0.0

    @property
    def total_value(self) -> float:
        return float(self.total)


def unified_loss(
    branch_logits: dict[str, Tensor],
    joint_logits: Tensor,
    intent_logits: Tensor | None,
    labels,
    alpha: float,
    main_terms: tuple[str, ...] = DEFAULT_MAIN_TERMS,
    denominator: int | None = None,
    class_weights: np.ndarray | None = None,
) -> LossBreakdown:
    """main = sum of per-term CE / denominator; total = main + alpha * intention.

    `main_terms` names the cross-entropy terms ("in"/"out"/"ctx" branches and
    "joint"); names whose logits are absent in this configuration are skipped.
    `denominator` defaults to the number of terms actually present, so reduced
    pipelines keep a sensibly scaled loss.
    """
    if alpha < 0:
        raise ConfigError("alpha must be >= 0")
    available: dict[str, Tensor] = dict(branch_logits)
    available["joint"] = joint_logits
    terms: dict[str, Tensor] = {}
    for name in main_terms:
        if name not in ("in", "out", "ctx", "joint"):
            raise ConfigError(f"unknown main loss term {name!r}")
        logits = available.get(name)
        if logits is not None:
            terms[name] = cross_entropy(logits, labels, class_weights)
    if not terms:
        raise ConfigError("no main loss terms available")
    if denominator is None:
        denominator = len(terms)
    if denominator < 1:
        raise ConfigError("loss denominator must be >= 1")

    main = None
    for t in terms.values():
        main = t if main is None else main + t
    main = main / float(denominator)

    intention = cross_entropy(intent_logits, labels, class_weights) if intent_logits is not None else None
    if intention is not None and alpha > 0:
        total = main + alpha * intention
    else:
        total = main

    per_branch = {name: float(t) for name, t in terms.items()}
    return LossBreakdown(total=total, main=main, intention=intention, per_branch=per_branch, alpha=alpha)


def loss_from_trace(
    trace: ForwardTrace,
    labels,
    alpha: float,
    main_terms: tuple[str, ...] = DEFAULT_MAIN_TERMS,
    denominator: int | None = None,
    class_weights: np.ndarray | None = None,
) -> LossBreakdown:
    """Apply the unified loss to one forward pass, keeping the configured
    denominator only when the full term set is present."""
    if not trace.branch_logits and denominator is not None:
        denominator = None
    return unified_loss(
        trace.branch_logits,
        trace.joint_logits,
        trace.intent_logits,
        labels,
        alpha,
        main_terms=main_terms,
        denominator=denominator,
        class_weights=class_weights,
    )
