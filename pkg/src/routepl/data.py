"""User/context features, route offers and observation containers.

A dataset is stored column-wise: ``features`` is ``(n, 7)``, ``routes`` is
``(n, K, 3)`` with attributes ordered ``(t, c, tw)`` in raw units and
``choices`` holds 0-based indices into each offer set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .exceptions import ValidationError

N_FEATURES = 7
N_ATTRIBUTES = 3
DEFAULT_K = 8

AGE_GROUPS = ("young", "active", "retired")
DAY_TYPES = ("weekday", "weekend")
FEATURE_NAMES = ("z11", "z12", "z13", "z2", "z3", "z4", "z5")
ATTRIBUTE_NAMES = ("t", "c", "tw")


@dataclass(frozen=True)
class RawUserContext:
    age: int
    ses: float
    rain: bool
    slack: float
    disability: int = 0


def age_group(age) -> int:
    if age < 0:
        raise ValidationError(f"age must be nonnegative, got {age}")
    if age < 25:
        return 0
    if age <= 65:
        return 1
    return 2


def encode_features(raw: RawUserContext) -> np.ndarray:
    """Encode a user context as ``(z11, z12, z13, z2, z3, z4, z5)``.

    Ages 25 and 65 both fall in the active group.
    """
    if raw.disability not in (0, 1, 2):
        raise ValidationError(f"disability must be 0, 1 or 2, got {raw.disability}")
    z = np.zeros(N_FEATURES)
    z[age_group(raw.age)] = 1.0
    z[3] = float(raw.ses)
    z[4] = 1.0 if raw.rain else 0.0
    z[5] = float(raw.slack)
    z[6] = float(raw.disability)
    return z


def features_from_groups(group: int, ses, rain, slack, disability) -> np.ndarray:
    if group not in (0, 1, 2):
        raise ValidationError(f"age group index must be 0, 1 or 2, got {group}")
    if disability not in (0, 1, 2):
        raise ValidationError(f"disability must be 0, 1 or 2, got {disability}")
    z = np.zeros(N_FEATURES)
    z[group] = 1.0
    z[3:] = (float(ses), float(rain), float(slack), float(disability))
    return z


def check_features(z) -> np.ndarray:
    """Validate one ``(7,)`` vector or a ``(n, 7)`` matrix of encoded features."""
    z = np.asarray(z, dtype=float)
    zz = np.atleast_2d(z)
    if zz.ndim != 2 or zz.shape[1] != N_FEATURES:
        raise ValidationError(f"features must have {N_FEATURES} columns, got shape {z.shape}")
    if not np.all(np.isfinite(zz)):
        raise ValidationError("features contain non-finite values")
    onehot = zz[:, :3]
    if not (np.all((onehot == 0) | (onehot == 1)) and np.all(onehot.sum(axis=1) == 1)):
        raise ValidationError("age one-hot block must contain exactly one 1")
    if not np.all((zz[:, 4] == 0) | (zz[:, 4] == 1)):
        raise ValidationError("rain indicator must be 0 or 1")
    if not np.all(np.isin(zz[:, 6], (0.0, 1.0, 2.0))):
        raise ValidationError("disability level must be 0, 1 or 2")
    return z


@dataclass(frozen=True)
class Route:
    """Raw route attributes: total time and walking time in minutes, cost in currency."""

    t: float
    c: float
    tw: float

    def as_array(self) -> np.ndarray:
        return np.array([self.t, self.c, self.tw], dtype=float)

    @classmethod
    def from_array(cls, r) -> "Route":
        return cls(float(r[0]), float(r[1]), float(r[2]))


def as_routes(routes) -> np.ndarray:
    """Coerce a sequence of ``Route`` or ``(t, c, tw)`` triples to a ``(K, 3)`` array."""
    if isinstance(routes, np.ndarray):
        arr = routes.astype(float)
    else:
        arr = np.array([r.as_array() if isinstance(r, Route) else r for r in routes], dtype=float)
    if arr.ndim != 2 or arr.shape[1] != N_ATTRIBUTES:
        raise ValidationError(f"routes must have shape (K, 3), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class Observation:
    features: np.ndarray
    routes: np.ndarray
    choice: int

    def __post_init__(self):
        routes = as_routes(self.routes)
        object.__setattr__(self, "features", check_features(np.asarray(self.features, dtype=float)))
        object.__setattr__(self, "routes", routes)
        if not 0 <= int(self.choice) < len(routes):
            raise ValidationError(f"choice {self.choice} out of range for {len(routes)} routes")
        object.__setattr__(self, "choice", int(self.choice))


@dataclass
class ChoiceData:
    """A batch of observations with homogeneous offer-set size ``K``.

    ``days`` and ``day_types`` are optional per-observation metadata used by
    the sequential (dynamic) estimator's observation store.
    """

    features: np.ndarray
    routes: np.ndarray
    choices: np.ndarray
    days: Optional[np.ndarray] = None
    day_types: Optional[np.ndarray] = None
    scaler: object = field(default=None, compare=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float).reshape(-1, N_FEATURES)
        n = len(self.features)
        routes = np.asarray(self.routes, dtype=float)
        if routes.size == 0:
            routes = routes.reshape(n, 0 if n == 0 else -1, N_ATTRIBUTES)
        if routes.ndim != 3 or routes.shape[2] != N_ATTRIBUTES or routes.shape[0] != n:
            raise ValidationError(f"routes must have shape (n, K, 3), got {routes.shape}")
        self.routes = routes
        self.choices = np.asarray(self.choices, dtype=np.int64).reshape(-1)
        if len(self.choices) != n:
            raise ValidationError("choices and features differ in length")
        if n and (self.choices.min() < 0 or self.choices.max() >= routes.shape[1]):
            bad = int(np.flatnonzero((self.choices < 0) | (self.choices >= routes.shape[1]))[0])
            raise ValidationError(f"choice out of range at observation {bad}")
        if self.days is not None:
            self.days = np.asarray(self.days, dtype=np.int64).reshape(-1)
            if len(self.days) != n:
                raise ValidationError("days and features differ in length")
        if self.day_types is not None:
            self.day_types = np.asarray(self.day_types, dtype=object).reshape(-1)
            if len(self.day_types) != n:
                raise ValidationError("day_types and features differ in length")
            if not all(d in DAY_TYPES for d in self.day_types):
                raise ValidationError(f"day_type must be one of {DAY_TYPES}")

    def __len__(self):
        return len(self.choices)

    @property
    def n_routes(self) -> int:
        return self.routes.shape[1]

    def subset(self, index) -> "ChoiceData":
        index = np.asarray(index)
        return ChoiceData(
            self.features[index],
            self.routes[index],
            self.choices[index],
            None if self.days is None else self.days[index],
            None if self.day_types is None else self.day_types[index],
            scaler=self.scaler,
        )

    def observations(self) -> Iterator[Observation]:
        for z, r, y in zip(self.features, self.routes, self.choices):
            yield Observation(z, r, int(y))

    def validate(self) -> "ChoiceData":
        """Check feature encodings and the raw-route invariants ``t, c >= 0``, ``0 <= tw <= t``."""
        if len(self):
            check_features(self.features)
            t, c, tw = self.routes[..., 0], self.routes[..., 1], self.routes[..., 2]
            bad = (t < 0) | (c < 0) | (tw < 0) | (tw > t) | ~np.isfinite(self.routes).all(axis=2)
            if bad.any():
                i = int(np.flatnonzero(bad.any(axis=1))[0])
                raise ValidationError(f"route attributes violate t, c >= 0, 0 <= tw <= t at observation {i}")
        return self

    @classmethod
    def from_observations(cls, observations: Iterable[Observation], days=None, day_types=None):
        obs = list(observations)
        if not obs:
            return cls.empty()
        return cls(
            np.stack([o.features for o in obs]),
            np.stack([o.routes for o in obs]),
            np.array([o.choice for o in obs]),
            days,
            day_types,
        )

    @classmethod
    def empty(cls, k: int = DEFAULT_K) -> "ChoiceData":
        return cls(np.zeros((0, N_FEATURES)), np.zeros((0, k, N_ATTRIBUTES)), np.zeros(0, dtype=np.int64))

    @classmethod
    def concatenate(cls, parts: Sequence["ChoiceData"]) -> "ChoiceData":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        with_days = all(p.days is not None for p in parts)
        with_types = all(p.day_types is not None for p in parts)
        return cls(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.routes for p in parts]),
            np.concatenate([p.choices for p in parts]),
            np.concatenate([p.days for p in parts]) if with_days else None,
            np.concatenate([p.day_types for p in parts]) if with_types else None,
            scaler=parts[0].scaler,
        )


def to_design_matrix(data: ChoiceData) -> np.ndarray:
    """Flatten to the estimator input layout ``[z (7), t1, c1, tw1, ..., tK, cK, twK]``."""
    return np.hstack([data.features, data.routes.reshape(len(data), -1)])


def split_design_matrix(X) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValidationError(f"expected a 2-D design matrix, got {X.ndim}-D")
    n_route_cols = X.shape[1] - N_FEATURES
    if n_route_cols < 2 * N_ATTRIBUTES or n_route_cols % N_ATTRIBUTES:
        raise ValidationError(
            f"design matrix needs 7 feature columns plus 3 per route (K >= 2), got {X.shape[1]} columns"
        )
    return X[:, :N_FEATURES], X[:, N_FEATURES:].reshape(len(X), -1, N_ATTRIBUTES)


def from_design_matrix(X, y=None) -> ChoiceData:
    z, routes = split_design_matrix(X)
    choices = np.zeros(len(z), dtype=np.int64) if y is None else y
    return ChoiceData(z, routes, choices)
