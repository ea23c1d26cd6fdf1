"""Input validation helpers for the public estimator surface.

Accepts either a list of FeatureSequence objects or a tuple of stacked arrays
(interior (N, T, 64), exterior (N, T, 32), speed (N, T)) and returns
validated FeatureSequence lists.
"""

from __future__ import annotations

import numpy as np

from .data import EXTERIOR_DIM, INTERIOR_DIM, FeatureSequence
from .errors import DataError


def as_sequences(X, y=None, id_prefix: str = "sample") -> list[FeatureSequence]:
    """Canonicalise estimator input into validated FeatureSequence objects.

    With `y` given it overrides (or supplies) the labels; without it, X must
    already carry labels (FeatureSequence input).
    """
    if isinstance(X, (list, tuple)) and len(X) > 0 and isinstance(X[0], FeatureSequence):
        sequences = list(X)
        if y is not None:
            y = np.asarray(y, dtype=np.int64)
            if len(y) != len(sequences):
                raise DataError(f"y has {len(y)} labels for {len(sequences)} sequences")
            sequences = [
                FeatureSequence(s.id, int(label), s.fold, s.interior, s.exterior, s.speed)
                for s, label in zip(sequences, y)
            ]
        for s in sequences:
            s.validate()
        return sequences

    if isinstance(X, tuple) and len(X) == 3:
        interior, exterior, speed = (np.asarray(a, dtype=np.float64) for a in X)
        if interior.ndim != 3 or interior.shape[2] != INTERIOR_DIM:
            raise DataError(f"interior must be (N, T, {INTERIOR_DIM}), got {interior.shape}")
        if exterior.ndim != 3 or exterior.shape[2] != EXTERIOR_DIM:
            raise DataError(f"exterior must be (N, T, {EXTERIOR_DIM}), got {exterior.shape}")
        n, t = interior.shape[:2]
        if exterior.shape[:2] != (n, t):
            raise DataError(f"exterior shape {exterior.shape[:2]} does not match interior {(n, t)}")
        if speed.shape != (n, t):
            raise DataError(f"speed must be (N, T) = {(n, t)}, got {speed.shape}")
        if y is None:
            raise DataError("labels are required with array input")
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (n,):
            raise DataError(f"y must have shape ({n},), got {y.shape}")
        sequences = [
            FeatureSequence(f"{id_prefix}-{i:05d}", int(y[i]), 0, interior[i], exterior[i], speed[i])
            for i in range(n)
        ]
        for s in sequences:
            s.validate()
        return sequences

    raise DataError(
        "X must be a list of FeatureSequence or a tuple (interior, exterior, speed) of stacked arrays"
    )


def labels_of(sequences: list[FeatureSequence]) -> np.ndarray:
    return np.array([s.label for s in sequences], dtype=np.int64)
