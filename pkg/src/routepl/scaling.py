import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import N_ATTRIBUTES, ChoiceData
from .exceptions import ValidationError

STD_FLOOR = 1e-9


def _route_rows(routes) -> np.ndarray:
    if isinstance(routes, ChoiceData):
        routes = routes.routes
    arr = np.asarray(routes, dtype=float)
    if arr.shape[-1] != N_ATTRIBUTES:
        raise ValidationError(f"route arrays must end in an axis of length 3, got shape {arr.shape}")
    return arr.reshape(-1, N_ATTRIBUTES)


class RouteScaler(TransformerMixin, BaseEstimator):
    """Per-attribute standardization of ``(t, c, tw)``.

    Population mean/std are taken over every route of every observation.
    A column whose std is below ``1e-9`` gets std 1, so constant-cost corpora
    pass through shifted but unscaled.

    ``transform`` accepts any array whose last axis is the 3 attributes.
    """

    def fit(self, X, y=None):
        rows = _route_rows(X)
        if len(rows) == 0:
            raise ValidationError("cannot fit a scaler on an empty dataset")
        if not np.all(np.isfinite(rows)):
            raise ValidationError("route attributes contain non-finite values")
        self.mean_ = rows.mean(axis=0)
        std = rows.std(axis=0)
        self.std_ = np.where(std < STD_FLOOR, 1.0, std)
        return self

    def transform(self, X):
        check_is_fitted(self, ("mean_", "std_"))
        if isinstance(X, ChoiceData):
            X = X.routes
        X = np.asarray(X, dtype=float)
        return (X - self.mean_) / self.std_

    def inverse_transform(self, X):
        check_is_fitted(self, ("mean_", "std_"))
        return np.asarray(X, dtype=float) * self.std_ + self.mean_

    @classmethod
    def from_moments(cls, mean, std) -> "RouteScaler":
        scaler = cls()
        scaler.mean_ = np.asarray(mean, dtype=float).copy()
        scaler.std_ = np.asarray(std, dtype=float).copy()
        if scaler.mean_.shape != (N_ATTRIBUTES,) or scaler.std_.shape != (N_ATTRIBUTES,):
            raise ValidationError("scaler mean/std must each have 3 entries")
        if np.any(scaler.std_ <= 0):
            raise ValidationError("scaler std entries must be positive")
        return scaler

    def to_dict(self) -> dict:
        check_is_fitted(self, ("mean_", "std_"))
        return {"mean": self.mean_.tolist(), "std": self.std_.tolist()}


def fit_scaler(data) -> RouteScaler:
    return RouteScaler().fit(data)


def apply_scaler(scaler: RouteScaler, offers) -> np.ndarray:
    return scaler.transform(offers)
