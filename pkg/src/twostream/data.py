"""Dataset contract, file formats, fold assignment, and the synthetic
generator.

A sample is one pre-maneuver event: per-frame interior features (T x 64),
exterior features (T x 32), a speed trace (T), a class label (0 = straight
background, 1 = left turn, 2 = right turn, 3 = left lane change, 4 = right
lane change) and a fold id.  Real feature extractors should emit this schema;
no vision code lives here.

Two on-disk formats share the logical schema, selected by extension:
`.jsonl` (one object per line, canonical and byte-deterministic) and `.npz`
(packed arrays for larger runs).  A JSON manifest sidecar records sample
count, class histogram, fps, speed unit and a content hash.

The synthetic generator plants the structure the model is meant to exploit:
a class cue appears on designated exterior channels from a random onset, the
interior stream echoes the exterior with a fixed one-frame (configurable)
lag, and an optional spurious exterior channel carries a label-correlated
constant that the "shifted-test" split decorrelates while leaving every
other channel bit-identical to the plain test split.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

NUM_CLASSES = 5
INTERIOR_DIM = 64
EXTERIOR_DIM = 32
CLASS_NAMES = ("straight", "left_turn", "right_turn", "left_lane_change", "right_lane_change")
SCHEMA_VERSION = "v1"
_SCHEMA_KEYS = ("version", "id", "label", "fold", "interior", "exterior", "speed")


@dataclass
class FeatureSequence:
    """One event's frames plus label and fold assignment."""

    id: str
    label: int
    fold: int
    interior: np.ndarray
    exterior: np.ndarray
    speed: np.ndarray

    def __post_init__(self):
        self.interior = np.asarray(self.interior, dtype=np.float64)
        self.exterior = np.asarray(self.exterior, dtype=np.float64)
        self.speed = np.asarray(self.speed, dtype=np.float64)

    @property
    def frames(self) -> int:
        return self.interior.shape[0]

    def validate(self) -> None:
        t = self.frames
        if t < 2:
            raise DataError(f"sample {self.id!r}: needs at least 2 frames, got {t}")
        if self.interior.shape != (t, INTERIOR_DIM):
            raise DataError(f"sample {self.id!r}: interior must be (T, {INTERIOR_DIM}), got {self.interior.shape}")
        if self.exterior.shape != (t, EXTERIOR_DIM):
            raise DataError(f"sample {self.id!r}: exterior must be (T, {EXTERIOR_DIM}), got {self.exterior.shape}")
        if self.speed.shape != (t,):
            raise DataError(f"sample {self.id!r}: speed must be (T,), got {self.speed.shape}")
        if not (0 <= self.label < NUM_CLASSES):
            raise DataError(f"sample {self.id!r}: label {self.label} outside [0, {NUM_CLASSES})")
        if self.fold < 0:
            raise DataError(f"sample {self.id!r}: fold must be non-negative")
        for name, arr in (("interior", self.interior), ("exterior", self.exterior), ("speed", self.speed)):
            if not np.isfinite(arr).all():
                raise DataError(f"sample {self.id!r}: non-finite values in {name}")

    def truncate(self, keep_frames: int) -> "FeatureSequence":
        """Keep only the first `keep_frames` frames (earliest part of the window)."""
        if keep_frames < 2 or keep_frames > self.frames:
            raise DataError(f"cannot truncate {self.frames} frames to {keep_frames}")
        return replace(
            self,
            interior=self.interior[:keep_frames],
            exterior=self.exterior[:keep_frames],
            speed=self.speed[:keep_frames],
        )


# -- serialization -----------------------------------------------------------


def _record_dict(s: FeatureSequence) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "id": s.id,
        "label": int(s.label),
        "fold": int(s.fold),
        "interior": s.interior.tolist(),
        "exterior": s.exterior.tolist(),
        "speed": s.speed.tolist(),
    }


def _sequence_from_record(record: dict, where: str) -> FeatureSequence:
    if not isinstance(record, dict):
        raise DataError(f"{where}: record is not an object")
    got = set(record)
    expected = set(_SCHEMA_KEYS)
    if got != expected:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise DataError(f"{where}: schema mismatch (missing={missing}, extra={extra})")
    if record["version"] != SCHEMA_VERSION:
        raise DataError(f"{where}: unsupported schema version {record['version']!r}")
    seq = FeatureSequence(
        id=str(record["id"]),
        label=int(record["label"]),
        fold=int(record["fold"]),
        interior=np.asarray(record["interior"], dtype=np.float64),
        exterior=np.asarray(record["exterior"], dtype=np.float64),
        speed=np.asarray(record["speed"], dtype=np.float64),
    )
    seq.validate()
    return seq


def dataset_manifest(samples: list[FeatureSequence], path: Path, fps: float | None, speed_unit: str) -> dict:
    histogram = {name: 0 for name in CLASS_NAMES}
    for s in samples:
        histogram[CLASS_NAMES[s.label]] += 1
    if fps is None:
        fps = samples[0].frames / 5.0
    return {
        "version": SCHEMA_VERSION,
        "samples": len(samples),
        "class_histogram": histogram,
        "fps": fps,
        "speed_unit": speed_unit,
        "content_hash": hashlib.sha256(path.read_bytes()).hexdigest(),
    }


def manifest_path(path: str | Path) -> Path:
    return Path(str(path) + ".manifest.json")


def save_dataset(
    samples: list[FeatureSequence],
    path: str | Path,
    fps: float | None = None,
    speed_unit: str = "km/h",
) -> dict:
    """Write samples (format chosen by extension) plus the manifest sidecar."""
    if not samples:
        raise DataError("refusing to write an empty dataset")
    path = Path(path)
    for s in samples:
        s.validate()
    if path.suffix == ".jsonl":
        lines = [json.dumps(_record_dict(s), separators=(",", ":")) for s in samples]
        path.write_text("\n".join(lines) + "\n")
    elif path.suffix == ".npz":
        payload: dict[str, np.ndarray] = {}
        meta = []
        for i, s in enumerate(samples):
            payload[f"interior_{i}"] = s.interior
            payload[f"exterior_{i}"] = s.exterior
            payload[f"speed_{i}"] = s.speed
            meta.append({"id": s.id, "label": int(s.label), "fold": int(s.fold)})
        payload["meta"] = np.frombuffer(
            json.dumps({"version": SCHEMA_VERSION, "records": meta}).encode("utf-8"), dtype=np.uint8
        )
        with path.open("wb") as fh:
            np.savez(fh, **payload)
    else:
        raise DataError(f"unknown dataset extension {path.suffix!r} (use .jsonl or .npz)")
    manifest = dataset_manifest(samples, path, fps, speed_unit)
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_dataset(path: str | Path) -> tuple[list[FeatureSequence], dict]:
    """Read and validate a dataset; returns (samples, manifest).

    The manifest comes from the sidecar when present (its content hash is
    re-verified), otherwise it is recomputed from the file.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    samples: list[FeatureSequence] = []
    if path.suffix == ".jsonl":
        with path.open() as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
                samples.append(_sequence_from_record(record, f"{path}:{lineno}"))
    elif path.suffix == ".npz":
        with np.load(path) as archive:
            if "meta" not in archive:
                raise DataError(f"{path}: missing meta block")
            meta = json.loads(bytes(archive["meta"]).decode("utf-8"))
            if meta.get("version") != SCHEMA_VERSION:
                raise DataError(f"{path}: unsupported schema version {meta.get('version')!r}")
            for i, rec in enumerate(meta["records"]):
                seq = FeatureSequence(
                    id=str(rec["id"]),
                    label=int(rec["label"]),
                    fold=int(rec["fold"]),
                    interior=archive[f"interior_{i}"],
                    exterior=archive[f"exterior_{i}"],
                    speed=archive[f"speed_{i}"],
                )
                seq.validate()
                samples.append(seq)
    else:
        raise DataError(f"unknown dataset extension {path.suffix!r} (use .jsonl or .npz)")
    if not samples:
        raise DataError(f"{path}: no samples")

    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate sample ids")

    side = manifest_path(path)
    if side.exists():
        manifest = json.loads(side.read_text())
        actual = hashlib.sha256(path.read_bytes()).hexdigest()
        if manifest.get("content_hash") != actual:
            raise DataError(f"{path}: content hash does not match manifest sidecar")
    else:
        manifest = dataset_manifest(samples, path, None, "unknown")
    return samples, manifest


# -- fold assignment -----------------------------------------------------------


def assign_folds(samples: list[FeatureSequence], k: int, seed: int) -> list[FeatureSequence]:
    """Label-stratified fold assignment: per class, fold sizes differ by at
    most one.  Deterministic given the seed; returns new sequence objects."""
    if k < 2:
        raise ConfigError("fold count must be >= 2")
    rng = np.random.default_rng(seed)
    by_label: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_label.setdefault(s.label, []).append(i)
    folds = np.zeros(len(samples), dtype=np.int64)
    for label in sorted(by_label):
        idx = np.array(by_label[label])
        if len(idx) < k:
            warnings.warn(f"class {label} has only {len(idx)} samples for {k} folds; stratification is degenerate")
        rng.shuffle(idx)
        for j, i in enumerate(idx):
            folds[i] = j % k
    return [replace(s, fold=int(folds[i])) for i, s in enumerate(samples)]


# -- synthetic generator -----------------------------------------------------------


@dataclass
class SynthSpec:
    """Knobs of the planted-structure generator."""

    samples: int = 100
    frames: int = 20
    onset_range: tuple[int, int] | None = None  # None -> (max(1, T//8), max(2, T//4))
    signal_channels: tuple[int, ...] = (0, 1, 2, 3)
    lag: int = 1
    noise_std: float = 0.3
    spurious_strength: float = 0.0
    seed: int = 0
    amplitude: float = 2.0
    spurious_channel: int = 31
    response_gain: float = 0.8
    speed_base: float = 50.0

    def __post_init__(self):
        if self.frames < 2:
            raise ConfigError("frames must be >= 2")
        if self.lag < 1:
            raise ConfigError("lag must be >= 1")
        if self.onset_range is None:
            self.onset_range = (max(1, self.frames // 8), max(2, self.frames // 4))
        lo, hi = self.onset_range
        if not (1 <= lo <= hi <= self.frames - self.lag):
            raise ConfigError(f"onset_range {self.onset_range} must lie within [1, {self.frames - self.lag}]")
        if len(self.signal_channels) < NUM_CLASSES - 1:
            raise ConfigError(f"need {NUM_CLASSES - 1} signal channels, one per maneuver class")
        if len(set(self.signal_channels)) != len(self.signal_channels):
            raise ConfigError("signal channels must be distinct")
        for c in self.signal_channels:
            if not (0 <= c < EXTERIOR_DIM) or c == self.spurious_channel:
                raise ConfigError(f"signal channel {c} invalid or collides with the spurious channel")
        if not (0 <= self.spurious_channel < EXTERIOR_DIM):
            raise ConfigError("spurious channel out of range")


_SPEED_DRIFT = {0: 0.0, 1: -0.6, 2: -0.6, 3: 0.25, 4: 0.25}


def _response_matrix(gain: float, spurious_channel: int) -> np.ndarray:
    # Interior channel j echoes exterior channel j % 32 one lag later; the
    # spurious column is zeroed so the decorrelated split differs from the
    # plain test split in the spurious exterior channel alone.
    r = np.zeros((INTERIOR_DIM, EXTERIOR_DIM))
    for j in range(INTERIOR_DIM):
        r[j, j % EXTERIOR_DIM] = gain
    r[:, spurious_channel] = 0.0
    return r


def generate_synthetic(spec: SynthSpec, split: str = "train") -> list[FeatureSequence]:
    """Generate one split.

    "train" and "test" draw independent content; "shifted-test" replays the
    "test" content exactly but redraws the label the spurious channel aligns
    with, from a separate stream, so only that channel's label alignment
    changes.
    """
    if split not in ("train", "test", "shifted-test"):
        raise ConfigError(f"unknown split {split!r}")
    content_key = 0 if split == "train" else 1
    rng = np.random.default_rng([spec.seed, content_key])
    decoy_rng = np.random.default_rng([spec.seed, 2])
    response = _response_matrix(spec.response_gain, spec.spurious_channel)
    t = spec.frames
    lo, hi = spec.onset_range

    samples = []
    for i in range(spec.samples):
        label = int(rng.integers(0, NUM_CLASSES))
        onset = int(rng.integers(lo, hi + 1))
        exterior = rng.normal(0.0, spec.noise_std, size=(t, EXTERIOR_DIM))
        if label != 0:
            exterior[onset:, spec.signal_channels[label - 1]] += spec.amplitude

        spur_label = int(decoy_rng.integers(0, NUM_CLASSES)) if split == "shifted-test" else label
        exterior[:, spec.spurious_channel] = (spur_label - 2) / 2.0 * spec.spurious_strength

        interior = rng.normal(0.0, spec.noise_std, size=(t, INTERIOR_DIM))
        interior[spec.lag :] += exterior[: t - spec.lag] @ response.T

        steps = _SPEED_DRIFT[label] + rng.normal(0.0, 0.5, size=t - 1)
        speed = np.empty(t)
        speed[0] = spec.speed_base + rng.normal(0.0, 2.0)
        speed[1:] = speed[0] + np.cumsum(steps)
        speed = np.convolve(speed, np.ones(3) / 3.0, mode="same")
        speed[0], speed[-1] = speed[1], speed[-2]  # undo edge shrinkage of the moving average

        samples.append(
            FeatureSequence(
                id=f"{split}-{i:05d}",
                label=label,
                fold=0,
                interior=interior,
                exterior=exterior,
                speed=speed,
            )
        )
    return samples
