"""No-U-Turn sampler with multinomial trajectory sampling and dual-averaging
step-size adaptation (identity mass matrix).

The transition follows the iterative doubling scheme of Hoffman & Gelman
with Betancourt's multinomial selection: subtrees are sampled uniformly
by weight ``exp(-H)``, the top-level merge is biased towards the newest
subtree, and the generalized U-turn criterion is checked both across each
merged tree and across the boundary between its two halves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import DivergenceError, InitError, NumericError, ValidationError

logger = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0


@dataclass(frozen=True)
class McmcConfig:
    n_warmup: int = 500
    n_samples: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_warmup < 0 or self.n_samples < 1:
            raise ValidationError("n_warmup must be >= 0 and n_samples >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValidationError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValidationError("max_tree_depth must be positive")
        if self.seed < 0:
            raise ValidationError("seed must be nonnegative")


@dataclass
class SampleChain:
    draws: np.ndarray
    logp: np.ndarray
    tree_depth: np.ndarray
    accept_stat: np.ndarray
    divergent: np.ndarray
    n_leapfrog: np.ndarray
    step_size: float
    selection: str = "multinomial"
    warmup_divergences: int = 0

    @property
    def divergence_rate(self) -> float:
        return float(self.divergent.mean())

    def summary(self) -> dict:
        return {
            "step_size": self.step_size,
            "mean_tree_depth": float(self.tree_depth.mean()),
            "mean_accept_stat": float(self.accept_stat.mean()),
            "divergences": int(self.divergent.sum()),
            "divergence_rate": self.divergence_rate,
            "warmup_divergences": self.warmup_divergences,
            "selection": self.selection,
        }


class DualAveraging:
    """Nesterov dual averaging on ``log(step_size)`` (Hoffman & Gelman, Alg. 5)."""

    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = np.log(10.0 * step_size)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.t = 0

    def update(self, accept_stat) -> float:
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat)
        log_eps = self.mu - np.sqrt(self.t) / self.gamma * self.h_bar
        w = self.t ** (-self.kappa)
        self.log_eps_bar = w * log_eps + (1.0 - w) * self.log_eps_bar
        return float(np.exp(log_eps))

    @property
    def final_step_size(self) -> float:
        return float(np.exp(self.log_eps_bar))


@dataclass
class _Point:
    theta: np.ndarray
    p: np.ndarray
    logp: float
    grad: np.ndarray


@dataclass
class _Tree:
    beg: _Point          # first state built (adjacent to the existing trajectory)
    end: _Point          # last state built (far end)
    proposal: _Point
    rho: np.ndarray
    log_sum_w: float
    sum_metro: float = 0.0
    n_leapfrog: int = 0
    divergent: bool = False
    valid: bool = True


def _no_uturn(p_minus, p_plus, rho) -> bool:
    return float(p_minus @ rho) > 0.0 and float(p_plus @ rho) > 0.0


class _Integrator:
    def __init__(self, logp_grad: Callable):
        self.logp_grad = logp_grad

    def evaluate(self, theta):
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                lp, g = self.logp_grad(theta)
        except (NumericError, FloatingPointError, OverflowError):
            return -np.inf, np.zeros_like(theta)
        lp = float(lp)
        g = np.asarray(g, dtype=float)
        if not np.isfinite(lp) or not np.all(np.isfinite(g)):
            return -np.inf, np.zeros_like(theta)
        return lp, g

    def leapfrog(self, point: _Point, eps) -> _Point:
        p_half = point.p + 0.5 * eps * point.grad
        theta = point.theta + eps * p_half
        lp, g = self.evaluate(theta)
        return _Point(theta, p_half + 0.5 * eps * g, lp, g)


def _hamiltonian(point: _Point) -> float:
    return -point.logp + 0.5 * float(point.p @ point.p)


class NUTS:
    """One chain of the No-U-Turn sampler over ``logp_grad: R^d -> (float, R^d)``."""

    def __init__(self, logp_grad: Callable, dim: int, max_tree_depth: int = 10):
        self.integrator = _Integrator(logp_grad)
        self.dim = dim
        self.max_tree_depth = max_tree_depth

    def _build(self, point, depth, eps, h0, rng) -> _Tree:
        if depth == 0:
            new = self.integrator.leapfrog(point, eps)
            h = _hamiltonian(new)
            if not np.isfinite(h):
                h = np.inf
            delta = h - h0
            divergent = delta > MAX_DELTA_H
            return _Tree(
                beg=new, end=new, proposal=new, rho=new.p.copy(),
                log_sum_w=-delta, sum_metro=min(1.0, np.exp(-delta)) if np.isfinite(delta) else 0.0,
                n_leapfrog=1, divergent=divergent, valid=not divergent,
            )
        inner = self._build(point, depth - 1, eps, h0, rng)
        if not inner.valid:
            return inner
        outer = self._build(inner.end, depth - 1, eps, h0, rng)
        n_leapfrog = inner.n_leapfrog + outer.n_leapfrog
        sum_metro = inner.sum_metro + outer.sum_metro
        if not outer.valid:
            outer.n_leapfrog, outer.sum_metro = n_leapfrog, sum_metro
            return outer
        log_sum_w = np.logaddexp(inner.log_sum_w, outer.log_sum_w)
        proposal = inner.proposal
        if np.log(rng.uniform()) < outer.log_sum_w - log_sum_w:
            proposal = outer.proposal
        rho = inner.rho + outer.rho
        valid = (
            _no_uturn(inner.beg.p, outer.end.p, rho)
            and _no_uturn(inner.beg.p, outer.beg.p, inner.rho + outer.beg.p)
            and _no_uturn(inner.end.p, outer.end.p, outer.rho + inner.end.p)
        )
        return _Tree(inner.beg, outer.end, proposal, rho, log_sum_w, sum_metro, n_leapfrog, False, valid)

    def transition(self, current: _Point, eps, rng):
        start = _Point(current.theta, rng.standard_normal(self.dim), current.logp, current.grad)
        h0 = _hamiltonian(start)
        # ends[0] is the backward end, ends[1] the forward end of the trajectory
        ends = [start, start]
        rho = start.p.copy()
        log_sum_w = 0.0
        sample = current
        sum_metro, n_leapfrog, depth, divergent = 0.0, 0, 0, False
        while depth < self.max_tree_depth:
            forward = rng.uniform() > 0.5
            old_near = ends[1] if forward else ends[0]
            old_far = ends[0] if forward else ends[1]
            old_rho = rho
            tree = self._build(old_near, depth, eps if forward else -eps, h0, rng)
            depth += 1
            sum_metro += tree.sum_metro
            n_leapfrog += tree.n_leapfrog
            if tree.divergent:
                divergent = True
            if not tree.valid:
                break
            if tree.log_sum_w > log_sum_w or np.log(rng.uniform()) < tree.log_sum_w - log_sum_w:
                sample = tree.proposal
            log_sum_w = np.logaddexp(log_sum_w, tree.log_sum_w)
            if forward:
                ends[1] = tree.end
            else:
                ends[0] = tree.end
            rho = old_rho + tree.rho
            if not (
                _no_uturn(old_far.p, tree.end.p, rho)
                and _no_uturn(old_far.p, tree.beg.p, old_rho + tree.beg.p)
                and _no_uturn(old_near.p, tree.end.p, tree.rho + old_near.p)
            ):
                break
        accept = sum_metro / max(n_leapfrog, 1)
        sample = _Point(sample.theta, sample.p, sample.logp, sample.grad)
        return sample, depth, accept, divergent, n_leapfrog

    def find_reasonable_step_size(self, point: _Point, rng) -> float:
        eps = 1.0
        p = rng.standard_normal(self.dim)
        start = _Point(point.theta, p, point.logp, point.grad)
        h0 = _hamiltonian(start)

        def log_ratio(e):
            h = _hamiltonian(self.integrator.leapfrog(start, e))
            return h0 - h if np.isfinite(h) else -np.inf

        direction = 1.0 if log_ratio(eps) > np.log(0.5) else -1.0
        for _ in range(100):
            lr = log_ratio(eps)
            if direction > 0 and not lr > np.log(0.5):
                break
            if direction < 0 and not lr < np.log(0.5):
                break
            eps *= 2.0 ** direction
            if not 1e-10 < eps < 1e7:
                break
        return float(np.clip(eps, 1e-10, 1e7))


def nuts_sample(target, init, config: Optional[McmcConfig] = None, rng=None) -> SampleChain:
    """Run one NUTS chain.

    ``target`` is either a callable returning ``(logp, grad)`` or an object with
    a ``logp_grad`` method. The RNG is PCG64 seeded from ``config.seed`` unless
    an explicit ``numpy.random.Generator`` is passed.
    """
    config = config or McmcConfig()
    logp_grad = target if callable(target) else target.logp_grad
    init = np.array(init, dtype=float).reshape(-1)
    dim = len(init)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    sampler = NUTS(logp_grad, dim, config.max_tree_depth)

    lp, g = sampler.integrator.evaluate(init)
    if not np.isfinite(lp):
        raise InitError("log-density is not finite at the initial point")
    if g.shape != (dim,):
        raise InitError(f"gradient has shape {g.shape}, expected ({dim},)")
    current = _Point(init, np.zeros(dim), lp, g)

    eps = sampler.find_reasonable_step_size(current, rng)
    adapter = DualAveraging(eps, config.target_accept)
    warmup_div = 0
    for _ in range(config.n_warmup):
        current, _, accept, div, _ = sampler.transition(current, eps, rng)
        warmup_div += div
        eps = adapter.update(accept)
    if config.n_warmup > 0:
        eps = adapter.final_step_size

    n = config.n_samples
    draws = np.empty((n, dim))
    logps = np.empty(n)
    depth = np.empty(n, dtype=np.int64)
    accepts = np.empty(n)
    divergent = np.zeros(n, dtype=bool)
    leapfrogs = np.empty(n, dtype=np.int64)
    for i in range(n):
        current, depth[i], accepts[i], divergent[i], leapfrogs[i] = sampler.transition(current, eps, rng)
        draws[i] = current.theta
        logps[i] = current.logp

    chain = SampleChain(draws, logps, depth, accepts, divergent, leapfrogs, eps, warmup_divergences=warmup_div)
    if chain.divergence_rate > 0.5:
        raise DivergenceError(
            f"{chain.divergent.sum()} of {n} transitions diverged", diagnostics=chain.summary()
        )
    if chain.divergent.any():
        logger.warning("%d divergent transitions after warmup", int(chain.divergent.sum()))
    return chain


def chain_seeds(seed: int, n_chains: int) -> list:
    """Independent PCG64 generators, one per chain, spawned from ``seed``."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_chains)]
