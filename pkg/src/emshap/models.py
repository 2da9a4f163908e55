"""Built-in black-box models for attribution workflows.

Every model maps inputs to [0, 1] via an affine squash of its training-split
prediction range (clipped); the transform is recorded so run manifests can
report it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.neural_network import MLPRegressor

from .errors import ConfigError

MODEL_KINDS = ("linear", "mlp")


@dataclass
class SquashedModel:
    """A regression model with outputs squashed into [0, 1]."""

    kind: str
    weights: np.ndarray | None      # linear coefficients, or None for mlp
    intercept: float
    mlp: MLPRegressor | None
    lo: float
    hi: float

    def raw(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.kind == "linear":
            return x @ self.weights + self.intercept
        return self.mlp.predict(x)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.clip((self.raw(x) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    @property
    def transform(self) -> dict:
        """The recorded output squash: f -> clip((f - lo)/(hi - lo), 0, 1)."""
        return {"lo": self.lo, "hi": self.hi}


def fit_model(kind: str, x: np.ndarray, y: np.ndarray, seed: int = 0,
              margin: float = 0.2) -> SquashedModel:
    """Train a zoo model and fit its unit-interval output squash."""
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if kind == "linear":
        a = np.column_stack([x, np.ones(len(x))])
        coef, *_ = np.linalg.lstsq(a, y, rcond=None)
        weights, intercept, mlp = coef[:-1], float(coef[-1]), None
        raw = x @ weights + intercept
    else:
        mlp = MLPRegressor(hidden_layer_sizes=(16,), random_state=seed,
                           max_iter=800)
        mlp.fit(x, y)
        weights, intercept = None, 0.0
        raw = mlp.predict(x)
    span = float(raw.max() - raw.min()) or 1.0
    lo = float(raw.min()) - margin * span
    hi = float(raw.max()) + margin * span
    return SquashedModel(kind, weights, intercept, mlp, lo, hi)
