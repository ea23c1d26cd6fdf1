"""Full dual-stream model: per-stream encoders feeding a configurable
pipeline of fusion, causal extraction, and branch synthesis.

Stage composition rules (they matter only for non-default orders and the
ablation baselines):

* the first stage consumes the encoder outputs;
* the fusion stage transforms the two sequences in place;
* the causal stage reads the current sequences and produces the per-stream
  summaries plus the intention token;
* the synthesis stage reads the current summaries, falling back to the
  sequences' last frames (and a zero intention token) when it runs before
  the causal stage;
* a stage whose consumers all precede it contributes nothing downstream and
  is reported as inert in ablation output.

Without the synthesis stage, joint logits come from a linear classifier on
the concatenated per-stream summaries; with all three stages disabled this
is the plain dual-encoder concat baseline ("tbase").
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .causal import CausalPatternExtractor, CpeConfig, CpeOutput
from .encoder import EncoderConfig, StreamEncoder
from .errors import ConfigError, ShapeError
from .fusion import ReciprocalShiftFusion, RsfConfig, RsfOutput
from .nn import Linear
from .params import ParamStore
from .synthesis import FeatureSynthesis, FsnConfig, FsnOutput
from .tensor import Tensor, concat, no_grad

PIPELINE_STAGES = ("rsf", "cpe", "fsn")


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    rsf: RsfConfig = field(default_factory=RsfConfig)
    cpe: CpeConfig = field(default_factory=CpeConfig)
    fsn: FsnConfig = field(default_factory=FsnConfig)
    num_classes: int = 5
    use_rsf: bool = True
    use_cpe: bool = True
    use_fsn: bool = True
    pipeline: tuple[str, ...] = PIPELINE_STAGES

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        self.pipeline = tuple(self.pipeline)
        if sorted(self.pipeline) != sorted(PIPELINE_STAGES):
            raise ConfigError(f"pipeline must be a permutation of {PIPELINE_STAGES}, got {self.pipeline}")
        # One source of truth for the class count.
        self.cpe.num_classes = self.num_classes
        self.fsn.num_classes = self.num_classes

    @property
    def d_model(self) -> int:
        return self.encoder.d_model

    def active_pipeline(self) -> tuple[str, ...]:
        enabled = {"rsf": self.use_rsf, "cpe": self.use_cpe, "fsn": self.use_fsn}
        return tuple(stage for stage in self.pipeline if enabled[stage])


@dataclass
class ForwardTrace:
    """Everything a forward pass produced, for loss terms and inspection."""

    joint_logits: Tensor
    branch_logits: dict[str, Tensor]
    intent_logits: Tensor | None
    xi: Tensor | None
    z_intent: Tensor | None
    h_in: Tensor | None
    h_out: Tensor | None
    rsf: RsfOutput | None = None
    cpe: CpeOutput | None = None
    fsn: FsnOutput | None = None


class DualStreamModel:
    """Trainable model over (interior, exterior, speed) chunk batches."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, store: ParamStore | None = None):
        self.cfg = cfg
        self.store = store if store is not None else ParamStore()
        self.encoder_in = StreamEncoder(self.store, cfg.encoder, "interior", rng)
        self.encoder_out = StreamEncoder(self.store, cfg.encoder, "exterior", rng)
        d = cfg.d_model
        self.rsf = ReciprocalShiftFusion(self.store, d, cfg.rsf, rng) if cfg.use_rsf else None
        self.cpe = CausalPatternExtractor(self.store, d, cfg.cpe, rng) if cfg.use_cpe else None
        self.fsn = FeatureSynthesis(self.store, d, cfg.fsn, rng) if cfg.use_fsn else None
        self.concat_head = None if cfg.use_fsn else Linear(self.store, "head.concat", 2 * d, cfg.num_classes, rng)

    # -- input plumbing ------------------------------------------------------

    def _prepare_inputs(self, interior, exterior, speed):
        interior = Tensor.as_tensor(interior)
        exterior = Tensor.as_tensor(exterior)
        if interior.ndim != 3 or exterior.ndim != 3:
            raise ShapeError("model inputs must be (B, T, channels)")
        if interior.shape[:2] != exterior.shape[:2]:
            raise ShapeError(f"stream batch/time mismatch: {interior.shape} vs {exterior.shape}")
        needs_speed = self.cfg.encoder.use_speed or (self.cfg.use_fsn and self.cfg.fsn.use_speed)
        speed_t = None
        if needs_speed:
            if speed is None:
                raise ConfigError("this configuration requires a speed trace per sample")
            speed_t = Tensor.as_tensor(speed)
            if speed_t.shape != interior.shape[:2]:
                raise ShapeError(f"speed must be (B, T), got {speed_t.shape}")
        if self.cfg.encoder.use_speed:
            channel = speed_t.reshape(*speed_t.shape, 1)
            interior = concat([interior, channel], axis=-1)
            exterior = concat([exterior, channel], axis=-1)
        speed_scalar = None
        if self.cfg.use_fsn and self.cfg.fsn.use_speed:
            speed_scalar = speed_t.mean(axis=1, keepdims=True)
        return interior, exterior, speed_scalar

    # -- forward ---------------------------------------------------------------

    def forward(
        self,
        interior,
        exterior,
        speed=None,
        mode: str = "eval",
        rng: np.random.Generator | None = None,
        trace: bool = False,
    ) -> ForwardTrace:
        interior, exterior, speed_scalar = self._prepare_inputs(interior, exterior, speed)
        s_in = self.encoder_in(interior, mode, rng)
        s_out = self.encoder_out(exterior, mode, rng)

        h_in = h_out = z_intent = None
        rsf_out: RsfOutput | None = None
        cpe_out: CpeOutput | None = None
        fsn_out: FsnOutput | None = None

        for stage in self.cfg.active_pipeline():
            if stage == "rsf":
                rsf_out = self.rsf(s_in, s_out, mode=mode, rng=rng, need_weights=trace)
                s_in, s_out = rsf_out.x_in, rsf_out.x_out
            elif stage == "cpe":
                cpe_out = self.cpe(s_in, s_out, mode=mode, collect_history=trace)
                h_in, h_out, z_intent = cpe_out.h_in, cpe_out.h_out, cpe_out.z_intent
            elif stage == "fsn":
                hi = h_in if h_in is not None else s_in[:, -1, :]
                ho = h_out if h_out is not None else s_out[:, -1, :]
                zi = z_intent if z_intent is not None else Tensor(np.zeros((hi.shape[0], self.cfg.d_model)))
                fsn_out = self.fsn(hi, ho, zi, speed_scalar)

        if fsn_out is not None:
            joint = fsn_out.joint_logits
            branch_logits = dict(fsn_out.branch_logits)
        else:
            hi = h_in if h_in is not None else s_in[:, -1, :]
            ho = h_out if h_out is not None else s_out[:, -1, :]
            joint = self.concat_head(concat([hi, ho], axis=-1))
            branch_logits = {}

        return ForwardTrace(
            joint_logits=joint,
            branch_logits=branch_logits,
            intent_logits=cpe_out.intent_logits if cpe_out else None,
            xi=cpe_out.xi if cpe_out else None,
            z_intent=z_intent,
            h_in=h_in,
            h_out=h_out,
            rsf=rsf_out,
            cpe=cpe_out,
            fsn=fsn_out,
        )

    __call__ = forward

    # -- inference helpers -------------------------------------------------------

    def predict_logits(self, interior, exterior, speed=None) -> np.ndarray:
        with no_grad():
            return self.forward(interior, exterior, speed, mode="eval").joint_logits.data.copy()

    def predict(self, interior, exterior, speed=None) -> np.ndarray:
        return self.predict_logits(interior, exterior, speed).argmax(axis=-1)
