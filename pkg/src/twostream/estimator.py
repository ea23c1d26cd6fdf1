"""Scikit-learn compatible estimator facade.

`ManeuverClassifier` wraps model construction, training, and inference behind
the standard fit/predict/predict_proba surface, so the model composes with
the wider ecosystem (clone, grid search, cross_val_score over sequence
lists).  X is either a list of FeatureSequence objects or a tuple of stacked
arrays; see `twostream.validation.as_sequences`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .causal import CpeConfig
from .encoder import EncoderConfig
from .fusion import RsfConfig
from .model import ModelConfig
from .synthesis import FsnConfig
from .training import TrainConfig, train
from .validation import as_sequences, labels_of


class ManeuverClassifier(BaseEstimator, ClassifierMixin):
    """Dual-stream maneuver anticipation classifier.

    Parameters mirror the run-config keys; `use_speed` switches both the
    per-frame speed channel and the scalar speed input of the synthesis
    stage (the camera-only variant sets it False).
    """

    def __init__(
        self,
        d_model: int = 64,
        heads: int = 4,
        enc_layers: int = 2,
        ffn_dim: int = 0,
        dropout: float = 0.1,
        use_speed: bool = True,
        attention_mode: str = "bda",
        gate_reduction: int = 4,
        use_rsf: bool = True,
        use_cpe: bool = True,
        use_fsn: bool = True,
        pipeline: tuple[str, ...] = ("rsf", "cpe", "fsn"),
        num_classes: int = 5,
        lr: float = 1e-3,
        epochs: int = 160,
        batch_size: int = 16,
        alpha: float = 0.1,
        chunk_len: int = 16,
        seed: int = 0,
        precision: str = "float64",
    ):
        self.d_model = d_model
        self.heads = heads
        self.enc_layers = enc_layers
        self.ffn_dim = ffn_dim
        self.dropout = dropout
        self.use_speed = use_speed
        self.attention_mode = attention_mode
        self.gate_reduction = gate_reduction
        self.use_rsf = use_rsf
        self.use_cpe = use_cpe
        self.use_fsn = use_fsn
        self.pipeline = pipeline
        self.num_classes = num_classes
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.alpha = alpha
        self.chunk_len = chunk_len
        self.seed = seed
        self.precision = precision

    def _configs(self) -> tuple[ModelConfig, TrainConfig]:
        model_cfg = ModelConfig(
            encoder=EncoderConfig(
                d_model=self.d_model,
                heads=self.heads,
                layers=self.enc_layers,
                ffn_dim=self.ffn_dim,
                dropout_rate=self.dropout,
                use_speed=self.use_speed,
            ),
            rsf=RsfConfig(
                heads=self.heads,
                gate_reduction=self.gate_reduction,
                dropout_rate=self.dropout,
                attention_mode=self.attention_mode,
            ),
            cpe=CpeConfig(heads=self.heads),
            fsn=FsnConfig(use_speed=self.use_speed),
            num_classes=self.num_classes,
            use_rsf=self.use_rsf,
            use_cpe=self.use_cpe,
            use_fsn=self.use_fsn,
            pipeline=tuple(self.pipeline),
        )
        train_cfg = TrainConfig(
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            alpha=self.alpha,
            chunk_len=self.chunk_len,
            seed=self.seed,
            precision=self.precision,
        )
        return model_cfg, train_cfg

    def fit(self, X, y=None):
        sequences = as_sequences(X, y)
        model_cfg, train_cfg = self._configs()
        result = train(sequences, fold=None, cfg=train_cfg, model_cfg=model_cfg)
        self.classes_ = np.arange(self.num_classes)
        self.model_ = result.model
        self.predictor_ = result.predictor
        self.speed_norm_ = result.speed_norm
        self.history_ = result.history
        self.n_features_in_ = sequences[0].interior.shape[1] + sequences[0].exterior.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "predictor_")
        return self.predictor_.predict(as_sequences(X))

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "predictor_")
        return self.predictor_.predict_proba(as_sequences(X))

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "predictor_")
        return self.predictor_.predict_logits(as_sequences(X))

    def score(self, X, y=None, sample_weight=None) -> float:
        sequences = as_sequences(X, y)
        truth = labels_of(sequences)
        return float(np.average(self.predict(sequences) == truth, weights=sample_weight))
