"""Synthetic-data experiment drivers.

Each driver takes a plain dict of overrides, runs the experiment and returns
a JSON-ready table ``{"name", "config", "columns", "rows", "summary"}``.
Defaults reproduce the full-size setups; tests pass smaller configs.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .datagen import GeneratorConfig, generate_dataset, reference_scaler
from .dynamic import ObservationStore, WeightingConfig, first_posterior, fit_dynamic_step
from .exceptions import ValidationError
from .model import TABLE1_MEANS
from .posterior import evaluate_accuracy
from .sampler import McmcConfig
from .static import fit_static

logger = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    seed: int = 0
    n_validation: int = 20_000
    n_warmup: int = 300
    n_samples: int = 500
    target_accept: float = 0.8
    max_tree_depth: int = 10
    params: Optional[list] = None

    @classmethod
    def from_dict(cls, overrides: Optional[dict] = None):
        overrides = dict(overrides or {})
        known = {f.name for f in fields(cls)}
        unknown = set(overrides) - known
        if unknown:
            raise ValidationError(f"unknown experiment settings: {sorted(unknown)}")
        return cls(**overrides)

    def truth(self) -> np.ndarray:
        return np.asarray(TABLE1_MEANS if self.params is None else self.params, dtype=float).reshape(-1)

    def mcmc(self, seed: int) -> McmcConfig:
        return McmcConfig(self.n_warmup, self.n_samples, self.target_accept, self.max_tree_depth, seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = None if self.params is None else np.asarray(self.params, dtype=float).tolist()
        return d


@dataclass
class StaticSweepConfig(ExperimentConfig):
    sizes: Sequence[int] = (1_000, 5_000, 20_000)
    runs: int = 5


@dataclass
class DynamicItersConfig(ExperimentConfig):
    batch_sizes: Sequence[int] = (500, 1_000, 2_000)
    iterations: int = 15
    beta: float = 0.0
    n_warmup: int = 200
    n_samples: int = 400


@dataclass
class BetaShiftConfig(ExperimentConfig):
    betas: Sequence[float] = (0.1, 0.5, 0.9, 0.99)
    iterations: int = 15
    shift_after: int = 4
    batch_size: int = 2_500
    a_max: int = 5
    n_warmup: int = 200
    n_samples: int = 400


@dataclass
class FilterAblationConfig(ExperimentConfig):
    runs: int = 8
    iterations: int = 10
    batch_size: int = 2_500
    beta: float = 0.0
    n_warmup: int = 200
    n_samples: int = 400


def _seeds(cfg: ExperimentConfig, *path) -> int:
    """A derived 32-bit seed for a named sub-stream of the experiment."""
    return int(np.random.SeedSequence([cfg.seed, *path]).generate_state(1)[0])


def _validation(cfg: ExperimentConfig, params):
    return generate_dataset(GeneratorConfig(params=params, seed=_seeds(cfg, 1)), cfg.n_validation)


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def static_sweep(overrides: Optional[dict] = None) -> dict:
    """Accuracy and coefficient error of full-data fits across training-set sizes.

    Each run draws one training stream; smaller sizes use its prefix, so the
    sizes within a run are nested.
    """
    cfg = StaticSweepConfig.from_dict(overrides)
    truth = cfg.truth()
    val = _validation(cfg, truth)
    true_acc = evaluate_accuracy(truth, val.scaler, val)
    rows = []
    for run in range(cfg.runs):
        gen = GeneratorConfig(params=truth, seed=_seeds(cfg, 2, run))
        train = generate_dataset(gen, max(cfg.sizes))
        for n in cfg.sizes:
            data = train.subset(np.arange(n))
            data.scaler = None
            post = fit_static(data, cfg.mcmc(_seeds(cfg, 3, run, n)))
            acc = evaluate_accuracy(post.mean, post.scaler, val)
            rows.append({"run": run, "n_obs": int(n), "accuracy": acc, "rmse": _rmse(post.mean, truth),
                         "step_size": post.diagnostics["step_size"]})
            logger.info("static-sweep run %d n=%d accuracy %.4f", run, n, acc)
    summary = {
        "true_params_accuracy": true_acc,
        "mean_accuracy": {str(n): float(np.mean([r["accuracy"] for r in rows if r["n_obs"] == n])) for n in cfg.sizes},
        "mean_rmse": {str(n): float(np.mean([r["rmse"] for r in rows if r["n_obs"] == n])) for n in cfg.sizes},
    }
    return {"name": "static-sweep", "config": cfg.to_dict(),
            "columns": ["run", "n_obs", "accuracy", "rmse", "step_size"], "rows": rows, "summary": summary}


def run_dynamic(batches, validations, scaler, wcfg: WeightingConfig, cfg: ExperimentConfig, seed: int,
                filtering: bool = True) -> list:
    """Feed ``batches[l]`` as the data recorded on day ``l`` and return the
    validation accuracy of each day's posterior mean against ``validations[l]``.

    The first batch is fitted under the standard-normal prior; every later
    batch is a sequential step.
    """
    mcfg = cfg.mcmc(seed)
    store = ObservationStore().add(batches[0], 0)
    particles = first_posterior(batches[0], 0, mcfg, scaler)
    accs = [evaluate_accuracy(particles.mean, scaler, validations[0])]
    for day in range(1, len(batches)):
        store = store.add(batches[day], day)
        particles, store = fit_dynamic_step(particles, store, day + 1, wcfg, mcfg, scaler, filtering=filtering)
        accs.append(evaluate_accuracy(particles.mean, scaler, validations[day]))
    return accs


def _batches(gen: GeneratorConfig, size: int, iterations: int) -> list:
    return [generate_dataset(gen, size, start=l * size) for l in range(iterations)]


def _quartiles(x) -> dict:
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    return {"median": float(med), "iqr": float(q3 - q1), "mean": float(np.mean(x))}


def dynamic_iters(overrides: Optional[dict] = None) -> dict:
    """Accuracy per iteration of the sequential fit for several daily batch sizes."""
    cfg = DynamicItersConfig.from_dict(overrides)
    truth = cfg.truth()
    gen = GeneratorConfig(params=truth, seed=_seeds(cfg, 2))
    scaler = reference_scaler(gen)
    val = _validation(cfg, truth)
    wcfg = WeightingConfig(beta=cfg.beta)
    curves = {}
    for size in cfg.batch_sizes:
        batches = _batches(gen, size, cfg.iterations)
        curves[size] = run_dynamic(batches, [val] * cfg.iterations, scaler, wcfg, cfg, _seeds(cfg, 3, size))
        logger.info("dynamic-iters n=%d done", size)
    columns = ["iteration"] + [f"n_{s}" for s in cfg.batch_sizes]
    rows = [{"iteration": l + 1, **{f"n_{s}": curves[s][l] for s in cfg.batch_sizes}} for l in range(cfg.iterations)]
    summary = {f"n_{s}": _quartiles(curves[s]) for s in cfg.batch_sizes}
    return {"name": "dynamic-iters", "config": cfg.to_dict(), "columns": columns, "rows": rows, "summary": summary}


def recovery_iterations(accs, shift_after: int, tol: float = 0.01, reference=None) -> Optional[int]:
    """Iterations after the shift until accuracy is back within ``tol`` of its
    last pre-shift value; ``None`` if it never is.

    With ``reference`` (per-iteration accuracy of the generating parameters),
    the comparison is made on the gap ``accs - reference``, so generators with
    different attainable accuracy are put on the same footing.
    """
    gap = np.asarray(accs, dtype=float)
    if reference is not None:
        gap = gap - np.asarray(reference, dtype=float)
    pre = gap[shift_after - 1]
    for m, a in enumerate(gap[shift_after:], start=1):
        if a >= pre - tol:
            return m
    return None


def beta_shift(overrides: Optional[dict] = None) -> dict:
    """Sequential fits under a generator that switches after ``shift_after`` iterations.

    Before the switch data come from the negated coefficients, afterwards from
    the true ones. Each iteration is scored on a validation set drawn from the
    generator active at that iteration. The two generators reach different
    accuracy even with exact parameters, so recovery is counted on the gap to
    that oracle accuracy (``raw_recovery_iterations`` compares raw accuracy).
    Old observations beyond ``a_max`` days are dropped.
    """
    cfg = BetaShiftConfig.from_dict(overrides)
    if not 1 <= cfg.shift_after < cfg.iterations:
        raise ValidationError("shift_after must fall inside the run")
    truth = cfg.truth()
    before = GeneratorConfig(params=-truth, seed=_seeds(cfg, 2))
    after = before.with_params(truth)
    scaler = reference_scaler(after)
    batches = [generate_dataset(before if l < cfg.shift_after else after, cfg.batch_size, start=l * cfg.batch_size)
               for l in range(cfg.iterations)]
    val_before, val_after = _validation(cfg, -truth), _validation(cfg, truth)
    vals = [val_before if l < cfg.shift_after else val_after for l in range(cfg.iterations)]
    oracle_before = evaluate_accuracy(-truth, scaler, val_before)
    oracle_after = evaluate_accuracy(truth, scaler, val_after)
    oracle = [oracle_before if l < cfg.shift_after else oracle_after for l in range(cfg.iterations)]
    curves = {}
    for beta in cfg.betas:
        wcfg = WeightingConfig(beta=beta, a_max=cfg.a_max)
        curves[beta] = run_dynamic(batches, vals, scaler, wcfg, cfg, _seeds(cfg, 3))
        logger.info("beta-shift beta=%g done", beta)
    columns = ["iteration"] + [f"beta_{b:g}" for b in cfg.betas]
    rows = [{"iteration": l + 1, **{f"beta_{b:g}": curves[b][l] for b in cfg.betas}} for l in range(cfg.iterations)]
    summary = {
        f"beta_{b:g}": {"pre_shift": curves[b][cfg.shift_after - 1],
                        "recovery_iterations": recovery_iterations(curves[b], cfg.shift_after, reference=oracle),
                        "raw_recovery_iterations": recovery_iterations(curves[b], cfg.shift_after),
                        "final": curves[b][-1]}
        for b in cfg.betas
    }
    summary["oracle_accuracy"] = {"before": oracle_before, "after": oracle_after}
    return {"name": "beta-shift", "config": cfg.to_dict(), "columns": columns, "rows": rows, "summary": summary}


def filter_ablation(overrides: Optional[dict] = None) -> dict:
    """Paired runs of the sequential fit with and without particle filtering."""
    cfg = FilterAblationConfig.from_dict(overrides)
    truth = cfg.truth()
    val = _validation(cfg, truth)
    wcfg = WeightingConfig(beta=cfg.beta)
    rows = []
    final = {"filtered": [], "unfiltered": []}
    for run in range(cfg.runs):
        gen = GeneratorConfig(params=truth, seed=_seeds(cfg, 2, run))
        scaler = reference_scaler(gen)
        batches = _batches(gen, cfg.batch_size, cfg.iterations)
        seed = _seeds(cfg, 3, run)
        curves = {
            "filtered": run_dynamic(batches, [val] * cfg.iterations, scaler, wcfg, cfg, seed, filtering=True),
            "unfiltered": run_dynamic(batches, [val] * cfg.iterations, scaler, wcfg, cfg, seed, filtering=False),
        }
        for l in range(cfg.iterations):
            rows.append({"run": run, "iteration": l + 1,
                         "filtered": curves["filtered"][l], "unfiltered": curves["unfiltered"][l]})
        tail = min(5, cfg.iterations)
        for k in final:
            final[k].append(float(np.mean(curves[k][-tail:])))
        logger.info("filter-ablation run %d done", run)
    ddof = 1 if cfg.runs > 1 else 0
    summary = {k: {"final_mean": float(np.mean(v)), "across_run_variance": float(np.var(v, ddof=ddof)),
                   "per_run_final_mean": v} for k, v in final.items()}
    return {"name": "filter-ablation", "config": cfg.to_dict(),
            "columns": ["run", "iteration", "filtered", "unfiltered"], "rows": rows, "summary": summary}


EXPERIMENTS = {
    "static-sweep": static_sweep,
    "dynamic-iters": dynamic_iters,
    "beta-shift": beta_shift,
    "filter-ablation": filter_ablation,
}


def run_experiment(name: str, overrides: Optional[dict] = None) -> dict:
    try:
        driver = EXPERIMENTS[name]
    except KeyError:
        raise ValidationError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}") from None
    return driver(overrides)
