"""Decisions driven by a point estimate of the coefficients: which routes to
show, who gets a car-pool seat first, and how much to pay a driver to detour.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import expit
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from .data import Route, as_routes, check_features
from .exceptions import NumericError, ValidationError
from .model import compute_weights, route_value

KMEANS_MAX_ITER = 100
CANCEL_PENALTY = -0.5
WEIGHT_EPS = 1e-12


def _standardize(x) -> np.ndarray:
    std = x.std(axis=0)
    return (x - x.mean(axis=0)) / np.where(std < 1e-12, 1.0, std)


def _first_appearance(labels) -> np.ndarray:
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[np.unique(labels)[order]] = np.arange(len(order))
    return remap[labels]


def cluster_routes(routes, k: int, seed=0) -> np.ndarray:
    """k-means labels over the candidates' own standardized ``(t, c, tw)``.

    k-means++ seeding, at most 100 Lloyd iterations, stopping once the
    assignment no longer changes. If fewer than ``min(k, n)`` clusters come
    out nonempty (coincident points), the point farthest from its center in
    the largest cluster is split off until they do. Labels are numbered by
    first appearance.
    """
    x = as_routes(routes)
    n = len(x)
    if k < 1:
        raise ValidationError("k must be at least 1")
    if n == 0:
        raise ValidationError("no routes to cluster")
    if n <= k:
        return np.arange(n)
    xs = _standardize(x)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=KMEANS_MAX_ITER, tol=0.0,
                    algorithm="lloyd", random_state=seed).fit(xs)
    labels = km.labels_.astype(np.int64)
    used = set(labels.tolist())
    free = [c for c in range(k) if c not in used]
    for c in free:
        sizes = np.bincount(labels, minlength=k)
        big = int(np.argmax(sizes))
        members = np.flatnonzero(labels == big)
        d = np.sum((xs[members] - xs[members].mean(axis=0)) ** 2, axis=1)
        labels[members[int(np.argmax(d))]] = c
    return _first_appearance(labels)


def select_routes(point_estimate, scaler, features, candidates, k: int, seed=0) -> np.ndarray:
    """Cluster the candidates into ``k`` groups and keep the highest-value route of each.

    Returns ``min(k, n)`` candidate indices in ascending order; ties within a
    cluster go to the lowest index.
    """
    r = as_routes(candidates)
    if len(r) == 0:
        raise ValidationError("candidate set is empty")
    w = compute_weights(point_estimate, check_features(features))
    v = route_value(w, scaler.transform(r))
    labels = cluster_routes(r, k, seed)
    picks = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        picks.append(int(members[np.argmax(v[members])]))
    return np.sort(np.array(picks, dtype=np.int64))


@dataclass(frozen=True)
class CandidateUser:
    id: str
    features: np.ndarray
    reduced_mobility: bool = False
    walking_time_to_pickup: float = 0.0
    emission_savings: Optional[float] = None
    vetoes: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "features", check_features(np.asarray(self.features, dtype=float)))
        object.__setattr__(self, "vetoes", frozenset(self.vetoes))
        if not self.walking_time_to_pickup >= 0:
            raise ValidationError(f"walking time to pickup must be nonnegative for user {self.id}")


@dataclass(frozen=True)
class RideOffer:
    route: Route
    capacity: int
    driver_id: str = "driver"
    driver_vetoes: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "driver_vetoes", frozenset(self.driver_vetoes))
        if self.capacity < 0:
            raise ValidationError("capacity must be nonnegative")


@dataclass
class CarpoolRanking:
    order: list            # every eligible user id, highest priority first
    tiers: dict            # user id -> 1, 2 or 3
    values: dict           # user id -> model value of the ride (penalty included)
    capacity: int
    excluded: list = field(default_factory=list)   # removed by a veto

    @property
    def assigned(self) -> list:
        return self.order[: self.capacity]

    @property
    def waiting(self) -> list:
        return self.order[self.capacity:]

    def to_dict(self) -> dict:
        return {"assigned": self.assigned, "waiting": self.waiting,
                "tiers": self.tiers, "values": self.values, "excluded": self.excluded}


def rank_carpool(offer: RideOffer, candidates: Sequence[CandidateUser], point_estimate, scaler,
                 route_per_candidate: Optional[Mapping[str, Route]] = None,
                 penalties: Optional[Mapping[str, float]] = None) -> CarpoolRanking:
    """Priority list for the seats of one ride.

    Users vetoing the driver, or vetoed by them, are dropped. Tier 1:
    reduced-mobility users by ascending walking time to the pickup. Tier 2:
    other users with positive emission savings, by descending savings.
    Tier 3: everyone else, by descending model value of the ride (the
    offer's route unless a per-user route is given), plus any cancellation
    penalty. Remaining ties keep input order. Seats go to the first
    ``capacity`` users; the rest form the waiting list.
    """
    route_per_candidate = route_per_candidate or {}
    penalties = penalties or {}
    eligible, excluded = [], []
    for u in candidates:
        if offer.driver_id in u.vetoes or u.id in offer.driver_vetoes:
            excluded.append(u.id)
        else:
            eligible.append(u)

    values = {}
    if eligible:
        z = np.stack([u.features for u in eligible])
        rides = np.stack([as_routes([route_per_candidate.get(u.id, offer.route)])[0] for u in eligible])
        v = np.sum(-compute_weights(point_estimate, z) * scaler.transform(rides), axis=1)
        values = {u.id: float(v[i]) + float(penalties.get(u.id, 0.0)) for i, u in enumerate(eligible)}

    tiers, keys = {}, []
    for pos, u in enumerate(eligible):
        if u.reduced_mobility:
            tier, key = 1, u.walking_time_to_pickup
        elif u.emission_savings is not None and u.emission_savings > 0:
            tier, key = 2, -u.emission_savings
        else:
            tier, key = 3, -values[u.id]
        tiers[u.id] = tier
        keys.append((tier, key, pos))
    order = [eligible[pos].id for _, _, pos in sorted(keys)]
    return CarpoolRanking(order, tiers, values, offer.capacity, excluded)


def cancel_ride(penalties: Optional[Mapping[str, float]], user_id: str, penalty: float = CANCEL_PENALTY) -> dict:
    """Penalties after ``user_id`` cancels: ``penalty`` is added to their ride value in later rankings."""
    out = dict(penalties or {})
    out[user_id] = out.get(user_id, 0.0) + penalty
    return out


def raw_unit_weights(w, scaler) -> np.ndarray:
    """Weights on standardized attributes re-expressed per raw unit (divided by each attribute's std)."""
    return np.asarray(w, dtype=float) / scaler.std_


@dataclass(frozen=True)
class MinIncentive:
    value: float

    @property
    def is_negative(self) -> bool:
        """The detour is already at least as attractive as the baseline."""
        return bool(self.value < 0)

    @property
    def floored(self) -> float:
        return max(self.value, 0.0)

    def to_dict(self) -> dict:
        return {"incentive": self.value, "floored": self.floored, "detour_already_preferred": self.is_negative}


def min_incentive(w_raw, l1, l2) -> MinIncentive:
    """Payment making the driver indifferent between baseline ``l1`` and detour ``l2``.

    ``I = (w_t / w_c) (t2 - t1) - (c1 - c2)`` with raw-unit weights. Walking
    time does not enter.
    """
    w_t, w_c = float(w_raw[0]), float(w_raw[1])
    if w_c <= WEIGHT_EPS:
        raise NumericError("cost weight is zero; no payment can compensate the detour")
    r1, r2 = _route_array(l1), _route_array(l2)
    return MinIncentive(float(w_t / w_c * (r2[0] - r1[0]) - (r1[1] - r2[1])))


def incentive_odds(w_raw, l1, l2, incentive) -> float:
    """Odds of baseline over detour when the detour's cost is reduced by ``incentive``."""
    r1, r2 = _route_array(l1), _route_array(l2)
    return float(np.exp(-w_raw[0] * (r1[0] - r2[0]) - w_raw[1] * (r1[1] - (r2[1] - incentive))))


def _route_array(r) -> np.ndarray:
    return r.as_array() if isinstance(r, Route) else np.asarray(r, dtype=float)


@dataclass(frozen=True)
class ServedUser:
    """A passenger served by a detour: ``ride`` is their trip on it (the detour itself
    by default), ``alternative`` their best option without it."""

    features: np.ndarray
    alternative: Route
    ride: Optional[Route] = None


@dataclass(frozen=True)
class Detour:
    route: Route
    served: tuple = ()


@dataclass(frozen=True)
class IncentiveProblem:
    driver_features: np.ndarray
    baseline: Route
    detours: tuple
    i_max: float
    step: float = 0.1
    kappa: float = 0.0

    def __post_init__(self):
        if not self.i_max > 0 or not self.step > 0:
            raise ValidationError("i_max and step must be positive")
        if not self.kappa >= 0:
            raise ValidationError("kappa must be nonnegative")
        if len(self.detours) == 0:
            raise ValidationError("an incentive problem needs at least one detour route")

    @property
    def grid(self) -> np.ndarray:
        n = int(np.floor(self.i_max / self.step + 1e-9))
        return self.step * np.arange(n + 1)


@dataclass
class IncentiveResult:
    incentive: float
    expected_utility: float
    objective: float
    grid: np.ndarray
    objectives: np.ndarray

    def to_dict(self) -> dict:
        return {"incentive": self.incentive, "expected_utility": self.expected_utility,
                "objective": self.objective}


def _value(point_estimate, scaler, z, routes) -> np.ndarray:
    w = compute_weights(point_estimate, check_features(np.asarray(z, dtype=float)))
    return route_value(w, scaler.transform(np.atleast_2d(routes)))


def expected_utility(problem: IncentiveProblem, point_estimate, scaler, incentives) -> np.ndarray:
    """Expected total utility of offering each incentive in ``incentives``.

    Sum over detours of P(driver takes detour over baseline | I) times the
    product of the passengers' acceptance probabilities times the summed
    passenger and driver values. The driver's detour cost is reduced by
    ``I`` before standardization; acceptance probabilities are two-route
    top-choice probabilities.
    """
    incentives = np.atleast_1d(np.asarray(incentives, dtype=float))
    z_d = problem.driver_features
    v_base = _value(point_estimate, scaler, z_d, _route_array(problem.baseline))[0]
    total = np.zeros(len(incentives))
    for detour in problem.detours:
        r = _route_array(detour.route)
        paid = np.repeat(r[None], len(incentives), axis=0)
        paid[:, 1] -= incentives
        v_d = _value(point_estimate, scaler, z_d, paid)
        p_driver = expit(v_d - v_base)
        p_served, v_served = 1.0, 0.0
        for user in detour.served:
            ride = _route_array(user.ride if user.ride is not None else detour.route)
            v_ride, v_alt = _value(point_estimate, scaler, user.features, np.stack([ride, _route_array(user.alternative)]))
            p_served *= expit(v_ride - v_alt)
            v_served += v_ride
        total += p_driver * p_served * (v_served + v_d)
    return total


def optimize_incentive(problem: IncentiveProblem, point_estimate, scaler) -> IncentiveResult:
    """Grid search over ``{0, step, ..., i_max}`` for the incentive maximizing
    expected utility minus ``kappa * I``; ties go to the smallest incentive."""
    grid = problem.grid
    eu = expected_utility(problem, point_estimate, scaler, grid)
    obj = eu - problem.kappa * grid
    best = int(np.argmax(obj))
    return IncentiveResult(float(grid[best]), float(eu[best]), float(obj[best]), grid, obj)
