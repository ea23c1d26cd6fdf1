"""Flat dotted-key run configuration.

A run is fully described by `key=value` lines (diff-able, hand-editable).
Every key has a default; unknown keys are hard errors.  The same flat form is
embedded in run manifests (alongside `run.*` provenance entries), which is how
evaluation rebuilds a trained model's exact configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .causal import CpeConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .fusion import RsfConfig
from .model import ModelConfig
from .synthesis import FsnConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    background: int = 0
    mp_strict: bool = False
    fps: float = 0.0  # 0 -> take fps from the dataset manifest
    eval_workers: int = 1  # evaluation batching degree; 1 keeps runs fully serial

    def __post_init__(self):
        if self.eval_workers < 1:
            raise ConfigError("eval.workers must be >= 1")


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_str_tuple(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


# key -> (section attribute path on RunConfig, value parser, value formatter)
_KEYS: dict[str, tuple[tuple[str, ...], object]] = {
    "enc.d_model": (("model", "encoder", "d_model"), int),
    "enc.heads": (("model", "encoder", "heads"), int),
    "enc.layers": (("model", "encoder", "layers"), int),
    "enc.ffn_dim": (("model", "encoder", "ffn_dim"), int),
    "enc.dropout": (("model", "encoder", "dropout_rate"), float),
    "enc.use_speed": (("model", "encoder", "use_speed"), _parse_bool),
    "enc.d_in_interior": (("model", "encoder", "d_in_interior"), int),
    "enc.d_in_exterior": (("model", "encoder", "d_in_exterior"), int),
    "rsf.heads": (("model", "rsf", "heads"), int),
    "rsf.gate_reduction": (("model", "rsf", "gate_reduction"), int),
    "rsf.dropout": (("model", "rsf", "dropout_rate"), float),
    "rsf.causal_mask": (("model", "rsf", "causal_mask"), _parse_bool),
    "rsf.attention_mode": (("model", "rsf", "attention_mode"), str),
    "cpe.heads": (("model", "cpe", "heads"), int),
    "cpe.eps_orth": (("model", "cpe", "eps_orth"), float),
    "cpe.baseline_scope_train": (("model", "cpe", "baseline_scope_train"), str),
    "cpe.baseline_scope_eval": (("model", "cpe", "baseline_scope_eval"), str),
    "cpe.final_step_only": (("model", "cpe", "final_step_only"), _parse_bool),
    "cpe.gate_mode": (("model", "cpe", "gate_mode"), str),
    "cpe.orth_target": (("model", "cpe", "orth_target"), str),
    "fsn.use_speed": (("model", "fsn", "use_speed"), _parse_bool),
    "fsn.hidden_dim": (("model", "fsn", "hidden_dim"), int),
    "fsn.classifier_bias": (("model", "fsn", "classifier_bias"), _parse_bool),
    "model.num_classes": (("model", "num_classes"), int),
    "model.use_rsf": (("model", "use_rsf"), _parse_bool),
    "model.use_cpe": (("model", "use_cpe"), _parse_bool),
    "model.use_fsn": (("model", "use_fsn"), _parse_bool),
    "model.pipeline": (("model", "pipeline"), _parse_str_tuple),
    "train.lr": (("train", "lr"), float),
    "train.epochs": (("train", "epochs"), int),
    "train.batch_size": (("train", "batch_size"), int),
    "train.alpha": (("train", "alpha"), float),
    "train.chunk_len": (("train", "chunk_len"), int),
    "train.seed": (("train", "seed"), int),
    "train.fold_count": (("train", "fold_count"), int),
    "train.loss_denominator": (("train", "loss_denominator"), int),
    "train.main_terms": (("train", "main_terms"), _parse_str_tuple),
    "train.class_weighting": (("train", "class_weighting"), _parse_bool),
    "train.lr_schedule": (("train", "lr_schedule"), str),
    "train.precision": (("train", "precision"), str),
    "metrics.background": (("background",), int),
    "metrics.mp_strict": (("mp_strict",), _parse_bool),
    "metrics.fps": (("fps",), float),
    "eval.workers": (("eval_workers",), int),
}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_flat_text(text: str, where: str = "<config>") -> dict[str, str]:
    """Parse `key=value` lines; '#' starts a comment, blank lines are skipped."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in entries:
            raise ConfigError(f"{where}:{lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def build_run_config(entries: dict[str, str]) -> RunConfig:
    """Defaults overridden by `entries`; unknown keys are errors."""
    unknown = sorted(set(entries) - set(_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    # Collect raw field values per dataclass, then construct so that each
    # dataclass's own validation runs against the final values.
    values: dict[str, object] = {}
    for key, raw in entries.items():
        path, parser = _KEYS[key]
        try:
            values[key] = parser(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid value for {key}: {raw!r} ({exc})") from exc

    def section(prefix: tuple[str, ...], cls):
        kwargs = {}
        for key, (path, _) in _KEYS.items():
            if path[:-1] == prefix and key in values:
                kwargs[path[-1]] = values[key]
        return cls(**kwargs)

    encoder = section(("model", "encoder"), EncoderConfig)
    rsf = section(("model", "rsf"), RsfConfig)
    cpe = section(("model", "cpe"), CpeConfig)
    fsn = section(("model", "fsn"), FsnConfig)
    model_kwargs = {
        path[-1]: values[key] for key, (path, _) in _KEYS.items() if path[:-1] == ("model",) and key in values
    }
    model = ModelConfig(encoder=encoder, rsf=rsf, cpe=cpe, fsn=fsn, **model_kwargs)
    train_kwargs = {
        path[-1]: values[key] for key, (path, _) in _KEYS.items() if path[:-1] == ("train",) and key in values
    }
    train = TrainConfig(**train_kwargs)
    top_kwargs = {path[0]: values[key] for key, (path, _) in _KEYS.items() if len(path) == 1 and key in values}
    return RunConfig(model=model, train=train, **top_kwargs)


def flatten_run_config(cfg: RunConfig) -> dict[str, str]:
    """The inverse of build_run_config; round-trips exactly."""
    out: dict[str, str] = {}
    for key, (path, _) in _KEYS.items():
        obj = cfg
        for attr in path:
            obj = getattr(obj, attr)
        out[key] = _format_value(obj)
    return out


def load_run_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Config file (optional) + override entries, overrides winning."""
    entries: dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        entries.update(parse_flat_text(path.read_text(), where=str(path)))
    if overrides:
        entries.update(overrides)
    return build_run_config(entries)


def read_manifest(path: str | Path) -> tuple[dict[str, str], dict[str, str]]:
    """Split a run manifest into (config entries, run.* provenance entries)."""
    entries = parse_flat_text(Path(path).read_text(), where=str(path))
    cfg = {k: v for k, v in entries.items() if not k.startswith("run.")}
    run = {k: v for k, v in entries.items() if k.startswith("run.")}
    return cfg, run
