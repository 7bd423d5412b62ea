from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ChoiceData
from .exceptions import ValidationError
from .model import N_PARAMS, as_param_matrix, predict_proba


@dataclass
class ParticleSet:
    """Posterior draws of the 14 free coefficients, plus the scaler they were fitted with.

    Carried from one day to the next by the sequential estimator.
    """

    particles: np.ndarray
    day: int = 0
    scaler: object = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=float)
        if self.particles.ndim != 2 or self.particles.shape[1] != N_PARAMS or len(self.particles) < 1:
            raise ValidationError(f"particles must have shape (n >= 1, {N_PARAMS}), got {self.particles.shape}")
        if not np.all(np.isfinite(self.particles)):
            raise ValidationError("particles contain non-finite values")

    def __len__(self):
        return len(self.particles)

    @property
    def mean(self) -> np.ndarray:
        return self.particles.mean(axis=0)


@dataclass
class PosteriorSummary:
    mean: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    level: float

    def to_dict(self) -> dict:
        def rows(v):
            m = as_param_matrix(v)
            return {"a2": m[0].tolist(), "a3": m[1].tolist()}

        return {"level": self.level, "mean": rows(self.mean),
                "ci_low": rows(self.ci_low), "ci_high": rows(self.ci_high)}


def posterior_summary(samples, level: float = 0.9) -> PosteriorSummary:
    """Componentwise mean and equal-tailed quantile interval."""
    draws = samples.particles if isinstance(samples, ParticleSet) else np.asarray(samples, dtype=float)
    if draws.ndim != 2 or len(draws) < 1:
        raise ValidationError("posterior summary needs a non-empty (n, d) sample")
    if not 0.0 < level < 1.0:
        raise ValidationError("credible level must lie in (0, 1)")
    tail = (1.0 - level) / 2.0
    low, high = np.quantile(draws, [tail, 1.0 - tail], axis=0)
    return PosteriorSummary(draws.mean(axis=0), low, high, level)


def evaluate_accuracy(point_estimate, scaler, validation: ChoiceData) -> float:
    """Share of observations whose highest-probability route is the recorded choice.

    Ties go to the lowest route index.
    """
    if len(validation) == 0:
        raise ValidationError("validation set is empty")
    p = predict_proba(point_estimate, validation.features, scaler.transform(validation.routes))
    return float(np.mean(np.argmax(p, axis=1) == validation.choices))
