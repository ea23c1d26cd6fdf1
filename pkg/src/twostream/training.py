"""End-to-end training: chunk sampling, batching, the optimisation loop,
logging, checkpointing, and deterministic resume.

Determinism contract: everything stochastic (parameter init, epoch shuffles,
chunk sampling, dropout) draws from one seeded generator in a fixed order, so
a fixed seed reproduces the dataset pass, the epoch log, and the final
checkpoint bit-exactly.  Wall-clock timings go to the console only; the log
file contains no nondeterministic columns.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FeatureSequence
from .errors import ConfigError, DataError, DivergenceError, NumericError
from .loss import DEFAULT_MAIN_TERMS, loss_from_trace
from .model import DualStreamModel, ModelConfig
from .params import ParamStore, adam_step, load_checkpoint, save_checkpoint
from .tensor import no_grad, set_default_dtype, softmax

LOG_HEADER = "epoch\tmain_loss\tintent_loss\ttotal\ttrain_acc\tval_acc"


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 160
    batch_size: int = 16
    alpha: float = 0.1
    chunk_len: int = 16
    seed: int = 0
    fold_count: int = 5
    loss_denominator: int = 4
    main_terms: tuple[str, ...] = DEFAULT_MAIN_TERMS
    class_weighting: bool = False
    lr_schedule: str = "constant"
    precision: str = "float64"

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.chunk_len < 2:
            raise ConfigError("chunk_len must be >= 2 (the causal stage needs a non-empty prefix)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")
        self.main_terms = tuple(self.main_terms)


def sample_chunk(t_total: int, chunk_len: int, mode: str, rng: np.random.Generator | None = None) -> np.ndarray:
    """Frame indices for one input chunk, always sorted ascending.

    Train mode draws distinct indices uniformly without replacement; eval mode
    spaces them evenly across the window (i_k = round(k*(T-1)/(C-1)), half-up).
    """
    if chunk_len < 1:
        raise ConfigError("chunk_len must be >= 1")
    if chunk_len > t_total:
        raise ConfigError(f"chunk_len {chunk_len} exceeds available frames {t_total}")
    if mode == "eval":
        if chunk_len == 1:
            return np.zeros(1, dtype=np.int64)
        positions = np.arange(chunk_len, dtype=np.float64) * (t_total - 1) / (chunk_len - 1)
        return np.floor(positions + 0.5).astype(np.int64)
    if mode == "train":
        if rng is None:
            raise ConfigError("train-mode chunk sampling requires an rng")
        return np.sort(rng.choice(t_total, size=chunk_len, replace=False))
    raise ConfigError(f"unknown sampling mode {mode!r}")


@dataclass
class SpeedNorm:
    mean: float = 0.0
    std: float = 1.0

    @staticmethod
    def fit(samples: list[FeatureSequence]) -> "SpeedNorm":
        values = np.concatenate([s.speed for s in samples])
        return SpeedNorm(mean=float(values.mean()), std=float(max(values.std(), 1e-6)))

    def apply(self, speed: np.ndarray) -> np.ndarray:
        return (speed - self.mean) / self.std


def build_batch(
    samples: list[FeatureSequence],
    chunk_len: int,
    mode: str,
    speed_norm: SpeedNorm,
    rng: np.random.Generator | None = None,
):
    """Chunk-sample each event and stack into (B, C, ...) arrays."""
    interiors, exteriors, speeds, labels = [], [], [], []
    for s in samples:
        idx = sample_chunk(s.frames, chunk_len, mode, rng)
        interiors.append(s.interior[idx])
        exteriors.append(s.exterior[idx])
        speeds.append(speed_norm.apply(s.speed[idx]))
        labels.append(s.label)
    return (
        np.stack(interiors),
        np.stack(exteriors),
        np.stack(speeds),
        np.asarray(labels, dtype=np.int64),
    )


@dataclass
class Predictor:
    """A trained model plus everything inference needs (chunking + speed scale)."""

    model: DualStreamModel
    chunk_len: int
    speed_norm: SpeedNorm
    batch_size: int = 64

    def _batches(self, samples):
        for i in range(0, len(samples), self.batch_size):
            yield samples[i : i + self.batch_size]

    def predict_logits(self, samples: list[FeatureSequence]) -> np.ndarray:
        chunks = []
        for batch in self._batches(samples):
            interior, exterior, speed, _ = build_batch(batch, self.chunk_len, "eval", self.speed_norm)
            chunks.append(self.model.predict_logits(interior, exterior, speed))
        return np.concatenate(chunks)

    def predict(self, samples: list[FeatureSequence]) -> np.ndarray:
        return self.predict_logits(samples).argmax(axis=-1)

    def predict_proba(self, samples: list[FeatureSequence]) -> np.ndarray:
        with no_grad():
            return softmax(self.predict_logits(samples), axis=-1).data.copy()


@dataclass
class EpochStats:
    epoch: int
    main: float
    intention: float
    total: float
    train_acc: float
    val_acc: float  # nan when no validation split
    wall_ms: float

    def log_line(self) -> str:
        return (
            f"{self.epoch}\t{self.main:.10g}\t{self.intention:.10g}\t{self.total:.10g}"
            f"\t{self.train_acc:.6f}\t{self.val_acc:.6f}"
        )


@dataclass
class TrainResult:
    model: DualStreamModel
    store: ParamStore
    predictor: Predictor
    history: list[EpochStats]
    speed_norm: SpeedNorm
    manifest: dict[str, str] = field(default_factory=dict)
    out_dir: Path | None = None


def _class_weights(labels: np.ndarray, num_classes: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    weights = np.zeros(num_classes)
    present = counts > 0
    weights[present] = len(labels) / (present.sum() * counts[present])
    return weights


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_schedule == "cosine":
        return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * epoch / max(1, cfg.epochs)))
    return cfg.lr


def train(
    dataset: list[FeatureSequence],
    fold: int | None,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    out_dir: str | Path | None = None,
    resume: bool = False,
    val_dataset: list[FeatureSequence] | None = None,
    manifest_extra: dict[str, str] | None = None,
    verbose: bool = False,
) -> TrainResult:
    """Train on `dataset`, holding out `fold` for validation when given.

    With `out_dir` set, writes checkpoint.bin, train_log.tsv, manifest.txt and
    trainer_state.json there; `resume=True` continues an interrupted run in
    the same directory bit-exactly (optimiser moments and generator state are
    restored).
    """
    set_default_dtype(np.float64 if cfg.precision == "float64" else np.float32)

    if fold is not None:
        if not (0 <= fold < cfg.fold_count):
            raise ConfigError(f"fold {fold} outside [0, {cfg.fold_count})")
        train_set = [s for s in dataset if s.fold != fold]
        val_set = [s for s in dataset if s.fold == fold]
    else:
        train_set = list(dataset)
        val_set = list(val_dataset) if val_dataset else []
    if not train_set:
        raise DataError("empty training fold")

    rng = np.random.default_rng(cfg.seed)
    model = DualStreamModel(model_cfg, rng)
    store = model.store

    speed_norm = SpeedNorm.fit(train_set)
    labels_all = np.array([s.label for s in train_set])
    class_weights = _class_weights(labels_all, model_cfg.num_classes) if cfg.class_weighting else None

    out_path = Path(out_dir) if out_dir is not None else None
    start_epoch = 0
    log_lines: list[str] = []
    if resume:
        if out_path is None:
            raise ConfigError("resume requires an output directory")
        state_file = out_path / "trainer_state.json"
        if not state_file.exists():
            raise ConfigError(f"nothing to resume in {out_path}")
        state = json.loads(state_file.read_text())
        load_checkpoint(out_path / "checkpoint.bin", store)
        rng.bit_generator.state = state["rng_state"]
        start_epoch = int(state["epochs_completed"])
        existing_log = (out_path / "train_log.tsv").read_text().splitlines()
        log_lines = existing_log[1:]  # drop header

    denominator = cfg.loss_denominator if model_cfg.use_fsn else None
    history: list[EpochStats] = []
    n = len(train_set)

    for epoch in range(start_epoch, cfg.epochs):
        tick = time.perf_counter()
        lr = _epoch_lr(cfg, epoch)
        order = rng.permutation(n)
        sum_main = sum_intent = sum_total = 0.0
        correct = 0
        for batch_no, lo in enumerate(range(0, n, cfg.batch_size)):
            batch = [train_set[i] for i in order[lo : lo + cfg.batch_size]]
            interior, exterior, speed, y = build_batch(batch, cfg.chunk_len, "train", speed_norm, rng)
            try:
                trace = model.forward(interior, exterior, speed, mode="train", rng=rng)
                breakdown = loss_from_trace(
                    trace, y, cfg.alpha, main_terms=cfg.main_terms, denominator=denominator, class_weights=class_weights
                )
            except NumericError as exc:
                raise DivergenceError(
                    f"non-finite values in epoch {epoch}, batch {batch_no}: {exc}", epoch=epoch, batch=batch_no
                ) from exc
            total = breakdown.total_value
            if not np.isfinite(total):
                raise DivergenceError(f"non-finite loss in epoch {epoch}, batch {batch_no}", epoch=epoch, batch=batch_no)
            store.zero_grad()
            breakdown.total.backward()
            adam_step(store, store.gradients(), lr=lr)

            weight = len(batch)
            sum_main += breakdown.main_value * weight
            sum_intent += breakdown.intention_value * weight
            sum_total += total * weight
            correct += int((trace.joint_logits.data.argmax(axis=-1) == y).sum())

        val_acc = float("nan")
        if val_set:
            predictor = Predictor(model, cfg.chunk_len, speed_norm)
            val_acc = float((predictor.predict(val_set) == np.array([s.label for s in val_set])).mean())

        stats = EpochStats(
            epoch=epoch,
            main=sum_main / n,
            intention=sum_intent / n,
            total=sum_total / n,
            train_acc=correct / n,
            val_acc=val_acc,
            wall_ms=(time.perf_counter() - tick) * 1e3,
        )
        history.append(stats)
        log_lines.append(stats.log_line())
        if verbose:
            print(f"{stats.log_line()}\twall_ms={stats.wall_ms:.1f}")

    manifest: dict[str, str] = {
        "run.seed": str(cfg.seed),
        "run.fold": "none" if fold is None else str(fold),
        "run.speed_mean": repr(speed_norm.mean),
        "run.speed_std": repr(speed_norm.std),
        "run.train_samples": str(n),
        "run.val_samples": str(len(val_set)),
        "run.precision": cfg.precision,
    }
    if manifest_extra:
        manifest.update(manifest_extra)

    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        save_checkpoint(store, out_path / "checkpoint.bin")
        (out_path / "train_log.tsv").write_text("\n".join([LOG_HEADER] + log_lines) + "\n")
        (out_path / "manifest.txt").write_text("".join(f"{k}={v}\n" for k, v in sorted(manifest.items())))
        (out_path / "trainer_state.json").write_text(
            json.dumps({"epochs_completed": cfg.epochs, "rng_state": rng.bit_generator.state}, indent=2)
        )

    predictor = Predictor(model, cfg.chunk_len, speed_norm)
    return TrainResult(
        model=model,
        store=store,
        predictor=predictor,
        history=history,
        speed_norm=speed_norm,
        manifest=manifest,
        out_dir=out_path,
    )
