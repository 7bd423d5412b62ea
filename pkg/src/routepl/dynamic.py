"""Nightly sequential updating.

Yesterday's posterior draws are filtered against the newest batch
(residual resampling), smoothed into a diagonal Gaussian mixture that acts
as today's prior, and combined with an age-weighted likelihood over the
retained observation store.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import logsumexp, softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import DAY_TYPES, ChoiceData
from .exceptions import ValidationError
from .model import ChoiceBatch, as_param_matrix, predict_proba
from .posterior import ParticleSet
from .sampler import McmcConfig, nuts_sample
from .scaling import RouteScaler
from .static import as_choice_data, fit_static

logger = logging.getLogger(__name__)

BANDWIDTH_FLOOR = 1e-8
MIN_DISTINCT = 5
# floor(x) is taken as x when x sits within this distance below an integer
_FLOOR_TOL = 1e-9


def bandwidth_factor(n_sample: int, dim: int) -> float:
    return (4.0 * n_sample / (dim + 4.0)) ** (2.0 / (dim + 6.0))


def plugin_bandwidth(particles) -> np.ndarray:
    """Diagonal mixture covariance: ``(4n / (d + 4)) ** (2 / (d + 6))`` times the sample variances.

    Variances use population normalization and are floored at ``1e-8``.
    """
    x = particles.particles if isinstance(particles, ParticleSet) else np.asarray(particles, dtype=float)
    n, d = x.shape
    if n < 2:
        raise ValidationError("plug-in bandwidth needs at least two particles")
    return np.maximum(bandwidth_factor(n, d) * x.var(axis=0), BANDWIDTH_FLOOR)


class MixturePrior:
    """Equal-weight mixture of ``N(center_i, diag(bandwidth))``."""

    def __init__(self, centers, bandwidth):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.bandwidth = np.broadcast_to(np.asarray(bandwidth, dtype=float), self.centers.shape[1:]).copy()
        if np.any(self.bandwidth <= 0):
            raise ValidationError("bandwidth entries must be positive")
        self.dim = self.centers.shape[1]
        self._prec = 1.0 / self.bandwidth
        self._const = -np.log(len(self.centers)) - 0.5 * np.sum(np.log(2 * np.pi * self.bandwidth))

    @classmethod
    def from_particles(cls, particles) -> "MixturePrior":
        x = particles.particles if isinstance(particles, ParticleSet) else particles
        return cls(x, plugin_bandwidth(x))

    def logp_grad(self, a):
        a = np.asarray(a, dtype=float).reshape(self.dim)
        diff = a - self.centers
        quad = -0.5 * (diff * diff) @ self._prec
        lse = logsumexp(quad)
        resp = np.exp(quad - lse)
        grad = -(resp @ diff) * self._prec
        return float(self._const + lse), grad

    def logpdf(self, a) -> float:
        return self.logp_grad(a)[0]


def mixture_log_prior(prior: MixturePrior, a):
    return prior.logp_grad(a)


def residual_resample(weights, rng):
    """Residual resampling of normalized ``weights``.

    Returns ``(indices, copies)``: each particle ``j`` first appears
    ``floor(w_j n)`` times (in index order), then ``n - sum(copies)``
    indices are drawn with replacement with probability proportional to the
    residuals ``w_j n - floor(w_j n)``.
    """
    w = np.asarray(weights, dtype=float)
    n = len(w)
    scaled = w * n
    copies = np.floor(scaled)
    copies += (scaled - copies) > 1.0 - _FLOOR_TOL
    copies = copies.astype(np.int64)
    residual = np.maximum(scaled - copies, 0.0)
    n_star = n - int(copies.sum())
    idx = np.repeat(np.arange(n), copies)
    if n_star > 0:
        extra = rng.choice(n, size=n_star, replace=True, p=residual / residual.sum())
        idx = np.concatenate([idx, extra])
    return idx, copies


def filter_weights(loglik) -> np.ndarray:
    """Median-shifted log-weights mapped through a softmax."""
    xi = np.asarray(loglik, dtype=float)
    return softmax(xi - np.median(xi))


def particle_filter_resample(particles: ParticleSet, batch: ChoiceData, scaler, rng) -> ParticleSet:
    """Reweight particles by their log-likelihood on ``batch`` and residual-resample.

    An empty batch returns the particles unchanged.
    """
    if len(batch) == 0:
        return particles
    rng = np.random.default_rng(rng)
    cb = ChoiceBatch(batch, scaler)
    xi = np.array([cb.loglik(a) for a in particles.particles])
    omega = filter_weights(xi)
    idx, copies = residual_resample(omega, rng)
    distinct = len(np.unique(idx))
    diagnostics = dict(particles.diagnostics)
    diagnostics.update(filter_distinct=distinct, filter_ess=float(1.0 / np.sum(omega ** 2)))
    if distinct < MIN_DISTINCT:
        diagnostics["filter_degenerate"] = True
        logger.warning("particle filter collapsed to %d distinct particles", distinct)
    return ParticleSet(particles.particles[idx], particles.day, particles.scaler, diagnostics)


@dataclass(frozen=True)
class WeightingConfig:
    beta: float = 1.0
    a_max: Optional[int] = None
    n_max: Optional[int] = None
    lambda_daytype: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValidationError("beta must lie in [0, 1]")
        if self.a_max is not None and self.a_max < 0:
            raise ValidationError("a_max must be nonnegative")
        if self.n_max is not None and self.n_max < 1:
            raise ValidationError("n_max must be positive")
        if self.lambda_daytype is not None and not 0.0 <= self.lambda_daytype <= 1.0:
            raise ValidationError("lambda_daytype must lie in [0, 1]")


class ObservationStore:
    """Observations tagged with the day they were recorded, in insertion order.

    An observation recorded on day ``k`` has age ``today - (k + 1)`` when the
    posterior for ``today`` is built, so yesterday's batch has age 0.
    """

    def __init__(self, data: Optional[ChoiceData] = None):
        data = data if data is not None else ChoiceData.empty()
        if len(data):
            if data.days is None:
                raise ValidationError("stored observations need a recording day")
            if np.any(np.diff(data.days) < 0):
                raise ValidationError("recording days must be nondecreasing in insertion order")
        if data.days is None:
            data.days = np.zeros(len(data), dtype=np.int64)
        if data.day_types is None:
            data.day_types = np.full(len(data), "weekday", dtype=object)
        self.data = data

    def __len__(self):
        return len(self.data)

    @property
    def days(self) -> np.ndarray:
        return self.data.days

    def add(self, batch: ChoiceData, day: int, day_type: str = "weekday") -> "ObservationStore":
        if day_type not in DAY_TYPES:
            raise ValidationError(f"day_type must be one of {DAY_TYPES}")
        if len(self) and day < self.days.max():
            raise ValidationError("cannot add observations recorded before the newest stored day")
        new = ChoiceData(batch.features, batch.routes, batch.choices,
                         np.full(len(batch), day), np.full(len(batch), day_type, dtype=object))
        return ObservationStore(ChoiceData.concatenate([self.data, new]))

    def ages(self, today: int) -> np.ndarray:
        # Data recorded on the processing day itself counts as age 0.
        return np.maximum(today - (self.days + 1), 0)

    def subset(self, index) -> "ObservationStore":
        return ObservationStore(self.data.subset(np.asarray(index, dtype=np.int64)))


def compute_observation_weights(store: ObservationStore, today: int, cfg: WeightingConfig,
                                target_daytype: Optional[str] = None) -> np.ndarray:
    """``eta_i = beta ** age_i``, optionally times ``lambda`` / ``1 - lambda`` by day type.

    ``0 ** 0`` is 1, so with ``beta = 0`` the newest batch keeps full weight.
    """
    if len(store) and today < store.days.max():
        raise ValidationError("today precedes a stored observation")
    eta = np.power(float(cfg.beta), store.ages(today).astype(float))
    if cfg.lambda_daytype is not None and target_daytype is not None:
        match = store.data.day_types == target_daytype
        eta = eta * np.where(match, cfg.lambda_daytype, 1.0 - cfg.lambda_daytype)
    return eta


def prune_store(store: ObservationStore, today: int, cfg: WeightingConfig,
                target_daytype: Optional[str] = None) -> ObservationStore:
    """Drop entries older than ``a_max``, then keep the ``n_max`` heaviest.

    Equal weights are broken towards the more recent day, then towards
    earlier insertion. Survivors keep their insertion order.
    """
    keep = np.arange(len(store))
    if cfg.a_max is not None:
        keep = keep[store.ages(today)[keep] <= cfg.a_max]
    if cfg.n_max is not None and len(keep) > cfg.n_max:
        eta = compute_observation_weights(store, today, cfg, target_daytype)[keep]
        order = np.lexsort((keep, -store.days[keep], -eta))
        keep = np.sort(keep[order[: cfg.n_max]])
    if len(keep) == len(store):
        return store
    return store.subset(keep)


class _WeightedPosterior:
    def __init__(self, batch, prior):
        self.batch = batch
        self.prior = prior

    def logp_grad(self, theta):
        ll, g = self.batch.loglik_grad(theta)
        lp, gp = self.prior.logp_grad(theta)
        return ll + lp, g + gp


def fit_dynamic_step(prev: ParticleSet, store: ObservationStore, today: int, wcfg: WeightingConfig,
                     mcfg: McmcConfig, scaler=None, filtering: bool = True,
                     target_daytype: Optional[str] = None) -> tuple[ParticleSet, ObservationStore]:
    """Build the posterior for ``today`` from yesterday's particles.

    Pipeline: prune the store, weight it, filter ``prev`` against the
    age-0 batch, centre a Gaussian mixture prior on the filtered particles,
    and run NUTS on weighted log-likelihood plus mixture log-prior. The
    mixture bandwidth is the plug-in value of ``prev`` itself, so a filter
    that keeps only a handful of distinct particles narrows the centres but
    cannot shrink the prior to a point. The chain starts at a filtered
    particle picked uniformly at random. Returns the new particle set and
    the pruned store.
    """
    if prev is None or len(prev) == 0:
        raise ValidationError("a previous particle set is required")
    scaler = scaler or prev.scaler
    if scaler is None:
        if len(store) == 0:
            raise ValidationError("no scaler and no stored observations to fit one")
        scaler = RouteScaler().fit(store.data)
    rng = np.random.default_rng([int(mcfg.seed), int(today), 1])

    pruned = prune_store(store, today, wcfg, target_daytype)
    eta = compute_observation_weights(pruned, today, wcfg, target_daytype)
    newest = pruned.data.subset(np.flatnonzero(pruned.ages(today) == 0))

    filtered = particle_filter_resample(prev, newest, scaler, rng) if filtering else prev
    prior = MixturePrior(filtered.particles, plugin_bandwidth(prev))
    target = _WeightedPosterior(ChoiceBatch(pruned.data, scaler, eta), prior)
    init = filtered.particles[rng.integers(len(filtered))]
    chain = nuts_sample(target, init, mcfg, rng=np.random.default_rng([int(mcfg.seed), int(today), 2]))

    diagnostics = chain.summary()
    diagnostics.update({k: v for k, v in filtered.diagnostics.items() if k.startswith("filter_")})
    diagnostics.update(n_obs=int(np.count_nonzero(eta)), bandwidth_mean=float(prior.bandwidth.mean()))
    return ParticleSet(chain.draws, today, scaler, diagnostics), pruned


def first_posterior(batch: ChoiceData, day: int, mcfg: McmcConfig, scaler) -> ParticleSet:
    """Posterior for ``day + 1`` from the first recorded batch, under the standard-normal prior."""
    post = fit_static(batch, replace(mcfg, seed=day_seed(mcfg.seed, day + 1)), scaler)
    post.day = day + 1
    return post


def day_seed(seed: int, day: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(day)]).generate_state(1)[0])


class SequentialPlackettLuce(ClassifierMixin, BaseEstimator):
    """Route-choice classifier updated one day at a time with :meth:`partial_fit`.

    Each call records a batch on ``day`` and builds the posterior used on
    ``day + 1``. The first batch is fitted under the standard-normal prior
    (:func:`fit_static`); later batches go through :func:`fit_dynamic_step`.
    The attribute scaler is fitted on the first batch unless given.
    """

    def __init__(self, beta=1.0, a_max=None, n_max=None, lambda_daytype=None, target_day_type=None,
                 filtering=True, n_warmup=300, n_samples=500, target_accept=0.8, max_tree_depth=10,
                 random_state=0, scaler=None):
        self.beta = beta
        self.a_max = a_max
        self.n_max = n_max
        self.lambda_daytype = lambda_daytype
        self.target_day_type = target_day_type
        self.filtering = filtering
        self.n_warmup = n_warmup
        self.n_samples = n_samples
        self.target_accept = target_accept
        self.max_tree_depth = max_tree_depth
        self.random_state = random_state
        self.scaler = scaler

    def _configs(self):
        wcfg = WeightingConfig(self.beta, self.a_max, self.n_max, self.lambda_daytype)
        mcfg = McmcConfig(self.n_warmup, self.n_samples, self.target_accept, self.max_tree_depth,
                          int(self.random_state or 0))
        return wcfg, mcfg

    def fit(self, X, y=None):
        for attr in ("posterior_", "store_", "day_"):
            self.__dict__.pop(attr, None)
        return self.partial_fit(X, y, day=0)

    def partial_fit(self, X, y=None, day=None, day_type="weekday"):
        data = as_choice_data(X, y)
        wcfg, mcfg = self._configs()
        if not hasattr(self, "posterior_"):
            if len(data) == 0:
                raise ValidationError("the first batch must not be empty")
            day = 0 if day is None else int(day)
            self.scaler_ = self.scaler if self.scaler is not None else RouteScaler().fit(data)
            self.store_ = ObservationStore().add(data, day, day_type)
            self.posterior_ = first_posterior(data, day, mcfg, self.scaler_)
            self.history_ = []
        else:
            day = self.posterior_.day if day is None else int(day)
            self.store_ = self.store_.add(data, day, day_type)
            self.posterior_, self.store_ = fit_dynamic_step(
                self.posterior_, self.store_, day + 1, wcfg, mcfg, self.scaler_,
                filtering=self.filtering, target_daytype=self.target_day_type,
            )
        self.history_.append(self.posterior_.diagnostics)
        self.coef_ = as_param_matrix(self.posterior_.mean).copy()
        self.classes_ = np.arange(data.n_routes)
        self.n_features_in_ = 7 + 3 * data.n_routes
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "coef_")
        data = as_choice_data(X)
        return predict_proba(self.coef_, data.features, self.scaler_.transform(data.routes))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def score(self, X, y=None, sample_weight=None):
        data = as_choice_data(X, y)
        y = data.choices if y is None else np.asarray(y)
        return float(np.average(self.predict(data) == y, weights=sample_weight))
