"""Full-data Bayesian fit with a standard-normal prior."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import ChoiceData, from_design_matrix
from .exceptions import ValidationError
from .model import N_PARAMS, ChoiceBatch, StandardNormalPrior, as_param_matrix, predict_proba
from .posterior import ParticleSet, posterior_summary
from .sampler import McmcConfig, nuts_sample
from .scaling import RouteScaler


def as_choice_data(X, y=None) -> ChoiceData:
    """Accept a :class:`ChoiceData` or a ``[z, t1, c1, tw1, ...]`` design matrix."""
    if isinstance(X, ChoiceData):
        return X
    return from_design_matrix(X, y)


class _Posterior:
    def __init__(self, batch, prior):
        self.batch = batch
        self.prior = prior

    def logp_grad(self, theta):
        ll, g = self.batch.loglik_grad(theta)
        lp, gp = self.prior.logp_grad(theta)
        return ll + lp, g + gp


def fit_static(data: ChoiceData, config: Optional[McmcConfig] = None, scaler=None) -> ParticleSet:
    """Sample the posterior of the 14 coefficients given every observation in ``data``.

    The chain starts at the prior mean. With no observations the target is
    the prior itself. ``scaler`` defaults to ``data.scaler`` and is otherwise
    fitted on ``data``.
    """
    config = config or McmcConfig()
    scaler = scaler or data.scaler
    if scaler is None:
        if len(data) == 0:
            raise ValidationError("an empty dataset needs an explicit scaler")
        scaler = RouteScaler().fit(data)
    batch = ChoiceBatch(data, scaler)
    chain = nuts_sample(_Posterior(batch, StandardNormalPrior()), np.zeros(N_PARAMS), config)
    return ParticleSet(chain.draws, day=0, scaler=scaler, diagnostics=chain.summary())


class PlackettLuceRouteChoice(ClassifierMixin, BaseEstimator):
    """Route-choice classifier fitted by NUTS on the full dataset.

    ``X`` is either a :class:`ChoiceData` (``y`` then defaults to its
    choices) or a design matrix ``[z (7), t1, c1, tw1, ..., tK, cK, twK]``
    with ``y`` the 0-based chosen route. Predictions use the posterior mean.

    Parameters
    ----------
    n_warmup, n_samples : int
        NUTS warmup (step-size adaptation) and retained draws.
    target_accept : float
        Dual-averaging acceptance target.
    max_tree_depth : int
    random_state : int
    scaler : RouteScaler, optional
        Pre-fitted attribute scaler; fitted on the training data otherwise.
    """

    def __init__(self, n_warmup=500, n_samples=1000, target_accept=0.8, max_tree_depth=10,
                 random_state=0, scaler=None):
        self.n_warmup = n_warmup
        self.n_samples = n_samples
        self.target_accept = target_accept
        self.max_tree_depth = max_tree_depth
        self.random_state = random_state
        self.scaler = scaler

    def _mcmc_config(self) -> McmcConfig:
        return McmcConfig(self.n_warmup, self.n_samples, self.target_accept, self.max_tree_depth,
                          int(self.random_state or 0))

    def fit(self, X, y=None):
        data = as_choice_data(X, y)
        if len(data) == 0:
            raise ValidationError("cannot fit on an empty dataset")
        scaler = self.scaler if self.scaler is not None else RouteScaler().fit(data)
        self.posterior_ = fit_static(data, self._mcmc_config(), scaler)
        self._set_point_estimate(data.n_routes)
        return self

    def _set_point_estimate(self, k):
        self.scaler_ = self.posterior_.scaler
        self.coef_ = as_param_matrix(self.posterior_.mean).copy()
        self.classes_ = np.arange(k)
        self.n_features_in_ = 7 + 3 * k

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

    def summary(self, level=0.9):
        check_is_fitted(self, "posterior_")
        return posterior_summary(self.posterior_, level)
