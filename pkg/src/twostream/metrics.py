"""Anticipation metrics with background-aware precision/recall.

Straight driving is the background class; only maneuvers are targets.  Four
counts are kept per maneuver m:

  TP  - truth m, predicted m
  FP  - predicted m while the truth was a *different maneuver*
  FPP - predicted m while the truth was background
  MP  - truth m, predicted anything else (missed)

Per-class precision is TP/(TP+FP+FPP), recall TP/(TP+MP), macro-averaged over
the maneuver classes with zero-denominator classes contributing 0.  The
default MP convention counts maneuver-to-maneuver confusion as a miss; the
"strict" alternative counts a miss only when the prediction was background.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LabelError


@dataclass(frozen=True)
class EventOutcome:
    truth: int
    predicted: int


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fpp: int = 0
    mp: int = 0

    def as_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fpp": self.fpp, "mp": self.mp}


@dataclass
class MetricsReport:
    num_classes: int
    background: int
    counts: dict[int, ClassCounts]
    confusion: np.ndarray  # (M, M), rows = truth, cols = prediction
    precision: float
    recall: float
    f1: float
    accuracy: float
    n_events: int
    per_class: dict[int, dict[str, float]] = field(default_factory=dict)
    mp_strict: bool = False

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "background": self.background,
            "counts": {str(m): c.as_dict() for m, c in sorted(self.counts.items())},
            "confusion": self.confusion.tolist(),
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "n_events": self.n_events,
            "per_class": {str(m): v for m, v in sorted(self.per_class.items())},
            "mp_strict": self.mp_strict,
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def render_table(self, class_names: list[str] | None = None) -> str:
        names = class_names or [f"class{m}" for m in range(self.num_classes)]
        lines = [f"{'class':<14s}{'TP':>6s}{'FP':>6s}{'FPP':>6s}{'MP':>6s}{'Pr':>9s}{'Re':>9s}"]
        for m in sorted(self.counts):
            c = self.counts[m]
            pc = self.per_class.get(m, {})
            lines.append(
                f"{names[m]:<14s}{c.tp:>6d}{c.fp:>6d}{c.fpp:>6d}{c.mp:>6d}"
                f"{pc.get('precision', 0.0):>9.4f}{pc.get('recall', 0.0):>9.4f}"
            )
        lines.append(
            f"macro Pr={self.precision:.4f}  Re={self.recall:.4f}  F1={self.f1:.4f}  "
            f"acc={self.accuracy:.4f}  n={self.n_events}"
        )
        return "\n".join(lines)


def tally(
    outcomes: list[EventOutcome] | list[tuple[int, int]],
    num_classes: int,
    background: int = 0,
    mp_strict: bool = False,
) -> tuple[dict[int, ClassCounts], np.ndarray]:
    """Count TP/FP/FPP/MP per maneuver and build the full confusion matrix."""
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for item in outcomes:
        truth, pred = (item.truth, item.predicted) if isinstance(item, EventOutcome) else item
        if not (0 <= truth < num_classes and 0 <= pred < num_classes):
            raise LabelError(f"outcome ({truth}, {pred}) outside [0, {num_classes})")
        confusion[truth, pred] += 1

    counts = {m: ClassCounts() for m in range(num_classes) if m != background}
    for m in counts:
        counts[m].tp = int(confusion[m, m])
        others = [k for k in range(num_classes) if k != m and k != background]
        counts[m].fp = int(confusion[others, m].sum()) if others else 0
        counts[m].fpp = int(confusion[background, m])
        if mp_strict:
            counts[m].mp = int(confusion[m, background])
        else:
            counts[m].mp = int(confusion[m].sum() - confusion[m, m])
    return counts, confusion


def pr_re_f1(counts: dict[int, ClassCounts]) -> tuple[float, float, float, dict[int, dict[str, float]]]:
    """Macro precision/recall/F1 over the maneuver classes.

    A class whose precision (or recall) denominator is zero contributes 0 to
    the corresponding macro mean; F1 is 0 when Pr+Re is 0.
    """
    if not counts:
        raise ConfigError("no maneuver classes to score")
    per_class: dict[int, dict[str, float]] = {}
    precisions, recalls = [], []
    for m, c in counts.items():
        pr_den = c.tp + c.fp + c.fpp
        re_den = c.tp + c.mp
        pr = c.tp / pr_den if pr_den else 0.0
        re = c.tp / re_den if re_den else 0.0
        per_class[m] = {"precision": pr, "recall": re}
        precisions.append(pr)
        recalls.append(re)
    precision = float(np.mean(precisions))
    recall = float(np.mean(recalls))
    f1 = 2.0 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return precision, recall, f1, per_class


def score_outcomes(
    outcomes: list[EventOutcome] | list[tuple[int, int]],
    num_classes: int,
    background: int = 0,
    mp_strict: bool = False,
) -> MetricsReport:
    """tally + pr_re_f1 + accuracy in one report."""
    counts, confusion = tally(outcomes, num_classes, background, mp_strict)
    precision, recall, f1, per_class = pr_re_f1(counts)
    n = int(confusion.sum())
    accuracy = float(np.trace(confusion) / n) if n else 0.0
    return MetricsReport(
        num_classes=num_classes,
        background=background,
        counts=counts,
        confusion=confusion,
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=accuracy,
        n_events=n,
        per_class=per_class,
        mp_strict=mp_strict,
    )


def truncated_frame_count(t_total: int, fps: float, horizon_seconds: float, window_seconds: float = 5.0) -> int:
    """Frames remaining when the observation window is cut `horizon_seconds`
    before the prediction instant (window covers the final `window_seconds`)."""
    if horizon_seconds < 0 or horizon_seconds >= window_seconds:
        raise ConfigError(f"horizon must lie in [0, {window_seconds}), got {horizon_seconds}")
    keep = int(round(fps * (window_seconds - horizon_seconds)))
    return min(keep, t_total)


def truncated_eval(
    predict_fn,
    sequences,
    horizons: list[int],
    fps: float,
    chunk_len: int,
    num_classes: int,
    background: int = 0,
    mp_strict: bool = False,
) -> dict:
    """Evaluate at several anticipation horizons.

    `predict_fn(truncated_sequences)` returns predicted labels for sequences
    whose frames have been cut to the horizon's window; horizon 0 is the full
    window.  Returns {"horizons": {k: MetricsReport}, "monotonic_flags": [...]}
    where a flag names any horizon whose F1 *improved* over the previous,
    shorter-horizon one (informational only).
    """
    if not sequences:
        raise ConfigError("empty evaluation dataset")
    reports: dict[int, MetricsReport] = {}
    for k in sorted(horizons):
        keep = truncated_frame_count(min(s.frames for s in sequences), fps, k)
        if keep < chunk_len:
            raise ConfigError(
                f"horizon {k}s leaves {keep} frames, fewer than chunk_len={chunk_len}; "
                f"use a shorter chunk or a smaller horizon"
            )
        truncated = [s.truncate(keep) for s in sequences]
        preds = predict_fn(truncated)
        outcomes = [(s.label, int(p)) for s, p in zip(sequences, preds)]
        reports[k] = score_outcomes(outcomes, num_classes, background, mp_strict)

    flags = []
    ks = sorted(reports)
    for prev, cur in zip(ks, ks[1:]):
        if reports[cur].f1 > reports[prev].f1:
            flags.append(f"F1 increased from horizon {prev}s to {cur}s")
    return {"horizons": reports, "monotonic_flags": flags}


def kfold_aggregate(per_fold: list[MetricsReport]) -> dict:
    """Pool counts across folds and recompute the metrics from the pooled
    counts; per-fold dispersion (mean/std of Pr, Re, F1) is reported alongside."""
    if not per_fold:
        raise ConfigError("need at least one fold report")
    num_classes = per_fold[0].num_classes
    background = per_fold[0].background
    mp_strict = per_fold[0].mp_strict
    for rep in per_fold:
        if (rep.num_classes, rep.background, rep.mp_strict) != (num_classes, background, mp_strict):
            raise ConfigError("fold reports disagree on class layout")

    pooled_counts = {m: ClassCounts() for m in range(num_classes) if m != background}
    pooled_confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for rep in per_fold:
        pooled_confusion += rep.confusion
        for m, c in rep.counts.items():
            pooled_counts[m].tp += c.tp
            pooled_counts[m].fp += c.fp
            pooled_counts[m].fpp += c.fpp
            pooled_counts[m].mp += c.mp

    precision, recall, f1, per_class = pr_re_f1(pooled_counts)
    n = int(pooled_confusion.sum())
    pooled = MetricsReport(
        num_classes=num_classes,
        background=background,
        counts=pooled_counts,
        confusion=pooled_confusion,
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=float(np.trace(pooled_confusion) / n) if n else 0.0,
        n_events=n,
        per_class=per_class,
        mp_strict=mp_strict,
    )
    dispersion = {
        name: {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        for name, vals in (
            ("precision", [r.precision for r in per_fold]),
            ("recall", [r.recall for r in per_fold]),
            ("f1", [r.f1 for r in per_fold]),
        )
    }
    return {"pooled": pooled, "per_fold": per_fold, "dispersion": dispersion}
