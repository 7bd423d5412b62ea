"""Two-level choice model: an MNL layer maps user features to attribute
weights, and a Plackett-Luce top-choice layer turns weighted route values
into choice probabilities.

Parameters are the two free coefficient rows ``a2`` (cost) and ``a3``
(walking time); the time row ``a1`` is pinned to zero. Flat parameter
vectors have length 14 in the order ``a2[0..6], a3[0..6]``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .data import N_ATTRIBUTES, N_FEATURES, ChoiceData, Observation
from .exceptions import NumericError, ValidationError

N_PARAMS = (N_ATTRIBUTES - 1) * N_FEATURES

# Posterior means reported for the 200,000-observation static fit; used as a
# production-like ground truth for synthetic data.
TABLE1_MEANS = np.array(
    [
        [1.402, 0.135, 0.446, -2.315, -1.155, -3.263, -0.716],
        [1.110, -1.243, 1.843, 1.018, 2.934, 0.884, 3.281],
    ]
)
TABLE1_CI = np.array(
    [
        [[0.760, 2.033], [-0.261, 0.545], [-0.685, 1.451], [-3.127, -1.579],
         [-2.218, 0.020], [-4.236, -2.283], [-1.983, 0.575]],
        [[0.297, 1.816], [-1.935, -0.610], [0.997, 2.811], [0.280, 1.866],
         [2.038, 3.629], [0.092, 1.684], [2.531, 4.155]],
    ]
)


def as_param_matrix(params) -> np.ndarray:
    """Return the ``(2, 7)`` matrix ``[a2; a3]`` from a flat or matrix input."""
    a = np.asarray(params, dtype=float)
    if a.shape == (N_PARAMS,):
        return a.reshape(N_ATTRIBUTES - 1, N_FEATURES)
    if a.shape == (N_ATTRIBUTES - 1, N_FEATURES):
        return a
    raise ValidationError(f"parameters must have shape (14,) or (2, 7), got {a.shape}")


def full_param_matrix(params) -> np.ndarray:
    """``(3, 7)`` matrix with the zero row for the time weight prepended."""
    return np.vstack([np.zeros(N_FEATURES), as_param_matrix(params)])


def compute_weights(params, z) -> np.ndarray:
    """Attribute weights ``w = softmax(a z)`` for one ``(7,)`` or many ``(n, 7)`` users."""
    a = as_param_matrix(params)
    z = np.asarray(z, dtype=float)
    logits = np.zeros(z.shape[:-1] + (N_ATTRIBUTES,))
    logits[..., 1:] = z @ a.T
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite weight logits")
    return softmax(logits, axis=-1)


def route_value(w, r) -> np.ndarray:
    """Additive value ``-(w_t t + w_c c + w_tw tw)`` of standardized routes."""
    return -(np.asarray(r, dtype=float) @ np.asarray(w, dtype=float))


def choice_probabilities(w, offers) -> np.ndarray:
    """Top-choice probabilities over a standardized ``(K, 3)`` offer set."""
    offers = np.asarray(offers, dtype=float)
    if offers.ndim != 2 or offers.shape[1] != N_ATTRIBUTES:
        raise ValidationError(f"offers must have shape (K, 3), got {offers.shape}")
    if len(offers) < 2:
        raise ValidationError("an offer set needs at least two routes")
    return softmax(route_value(w, offers))


def choice_odds(w, r_k, r_j) -> float:
    """Odds of choosing route ``r_k`` over ``r_j``."""
    diff = np.asarray(r_k, dtype=float) - np.asarray(r_j, dtype=float)
    return float(np.prod(np.exp(-np.asarray(w) * diff)))


def observation_log_likelihood(params, obs: Observation, scaler) -> float:
    w = compute_weights(params, obs.features)
    v = route_value(w, scaler.transform(obs.routes))
    if len(v) < 2:
        raise ValidationError("an offer set needs at least two routes")
    return float(v[obs.choice] - logsumexp(v))


def predict_proba(params, features, routes_std) -> np.ndarray:
    """``(n, K)`` choice probabilities for standardized ``(n, K, 3)`` routes."""
    w = compute_weights(params, features)
    v = -np.einsum("nki,ni->nk", routes_std, w)
    return softmax(v, axis=1)


class StandardNormalPrior:
    """Independent ``N(0, 1)`` prior on every free coefficient."""

    def __init__(self, dim: int = N_PARAMS):
        self.dim = dim
        self._const = -0.5 * dim * np.log(2 * np.pi)

    def logp_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self._const - 0.5 * float(theta @ theta), -theta


class _Group:
    """Observations sharing one offer-set size, laid out ``(3, K, n)`` for speed."""

    def __init__(self, features, routes_std, choices, eta, index):
        n = len(choices)
        self.n = n
        self.z = np.ascontiguousarray(features)
        self.zt = np.ascontiguousarray(features.T)
        self.r = np.ascontiguousarray(np.transpose(routes_std, (2, 1, 0)))
        cols = np.arange(n)
        self.choices = choices
        self.cols = cols
        self.r_chosen = self.r[:, choices, cols]
        self.eta = eta
        self.index = index

    def terms(self, a):
        s = a @ self.zt
        m0 = np.maximum(s.max(axis=0), 0.0)
        e = np.exp(s - m0)
        e0 = np.exp(-m0)
        tot = e0 + e.sum(axis=0)
        w = np.empty((N_ATTRIBUTES, self.n))
        w[0] = e0 / tot
        w[1:] = e / tot
        v = -np.einsum("ikn,in->kn", self.r, w)
        vmax = v.max(axis=0)
        ex = np.exp(v - vmax)
        se = ex.sum(axis=0)
        ll = v[self.choices, self.cols] - vmax - np.log(se)
        return w, ex / se, ll

    def loglik_obs(self, a):
        return self.terms(a)[2]

    def loglik_grad(self, a):
        w, p, ll = self.terms(a)
        value = float(self.eta @ ll)
        if not np.isfinite(value):
            bad = np.flatnonzero(~np.isfinite(ll))
            raise NumericError("non-finite log-likelihood", int(self.index[bad[0]]) if len(bad) else None)
        # d ll / d w = -(r_chosen - E_p[r]); then through the weight softmax.
        gw = np.einsum("kn,ikn->in", p, self.r) - self.r_chosen
        gs = w * (gw - (w * gw).sum(axis=0))
        grad = (gs[1:] * self.eta) @ self.z
        return value, grad


class ChoiceBatch:
    """Standardized observations with per-observation likelihood exponents ``eta``.

    Observations with ``eta == 0`` are dropped at construction, so an
    all-zero weighting is exactly the empty batch.
    """

    def __init__(self, data: ChoiceData, scaler, eta=None):
        n = len(data)
        eta = np.ones(n) if eta is None else np.asarray(eta, dtype=float).reshape(-1)
        if len(eta) != n:
            raise ValidationError("eta and data differ in length")
        if not np.all(np.isfinite(eta)) or np.any(eta < 0):
            raise ValidationError("observation weights must be finite and nonnegative")
        self.groups = []
        keep = np.flatnonzero(eta > 0)
        if len(keep):
            if data.n_routes < 2:
                raise ValidationError("an offer set needs at least two routes")
            routes_std = scaler.transform(data.routes[keep])
            self.groups.append(_Group(data.features[keep], routes_std, data.choices[keep], eta[keep], keep))
        self.n = len(keep)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[Observation, float]], scaler) -> "ChoiceBatch":
        """Build from ``(Observation, eta)`` pairs; mixed offer-set sizes are grouped."""
        batch = cls(ChoiceData.empty(), scaler)
        by_k = {}
        for i, (obs, eta) in enumerate(pairs):
            by_k.setdefault(len(obs.routes), []).append((i, obs, float(eta)))
        for k, items in sorted(by_k.items()):
            if k < 2:
                raise ValidationError("an offer set needs at least two routes")
            idx = np.array([i for i, _, _ in items])
            eta = np.array([e for _, _, e in items])
            if not np.all(np.isfinite(eta)) or np.any(eta < 0):
                raise ValidationError("observation weights must be finite and nonnegative")
            keep = eta > 0
            if not keep.any():
                continue
            z = np.stack([o.features for _, o, _ in items])[keep]
            r = scaler.transform(np.stack([o.routes for _, o, _ in items])[keep])
            y = np.array([o.choice for _, o, _ in items])[keep]
            batch.groups.append(_Group(z, r, y, eta[keep], idx[keep]))
            batch.n += int(keep.sum())
        return batch

    def loglik_grad(self, params):
        a = as_param_matrix(params)
        value = 0.0
        grad = np.zeros_like(a)
        for g in self.groups:
            v, gr = g.loglik_grad(a)
            value += v
            grad += gr
        return value, grad.reshape(-1)

    def loglik(self, params) -> float:
        """Unweighted total log-likelihood (the filter's particle log-weight)."""
        a = as_param_matrix(params)
        return float(sum(g.loglik_obs(a).sum() for g in self.groups))


def log_posterior_and_gradient(params, batch, prior=None, scaler=None):
    """Weighted log-posterior ``sum eta_i loglik_i + log prior`` and its gradient.

    ``batch`` is a :class:`ChoiceBatch` or a sequence of ``(Observation, eta)``
    pairs (then ``scaler`` is required).
    """
    if not isinstance(batch, ChoiceBatch):
        if scaler is None:
            raise ValidationError("a fitted scaler is needed to standardize raw observations")
        batch = ChoiceBatch.from_pairs(batch, scaler)
    prior = StandardNormalPrior() if prior is None else prior
    theta = as_param_matrix(params).reshape(-1)
    ll, g_ll = batch.loglik_grad(theta)
    lp, g_lp = prior.logp_grad(theta)
    value = ll + lp
    grad = g_ll + g_lp
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite log-posterior")
    return value, grad
