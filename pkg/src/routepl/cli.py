"""Command-line entry point: ``routepl <subcommand> ...``.

Results go to stdout as JSON, diagnostics to stderr. Exit status is 0 on
success, 1 for invalid input and 2 for numeric or sampler failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

import numpy as np

from . import io
from .datagen import GeneratorConfig, generate_dataset
from .decision import (Detour, IncentiveProblem, ServedUser, min_incentive, optimize_incentive,
                       rank_carpool, raw_unit_weights, select_routes)
from .dynamic import ObservationStore, WeightingConfig, fit_dynamic_step
from .exceptions import NumericError, SamplerError, ValidationError
from .experiments import EXPERIMENTS, run_experiment
from .model import N_PARAMS, compute_weights
from .posterior import evaluate_accuracy, posterior_summary
from .sampler import McmcConfig
from .static import fit_static

logger = logging.getLogger("routepl")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, default=_json_default)
    sys.stdout.write("\n")


def _posterior(path):
    particles, scaler = io.load_particles(path)
    if scaler is None:
        raise ValidationError(f"{path} has no attribute scaler")
    return particles, scaler


def cmd_datagen(args):
    params = io.load_params(args.params) if args.params else np.zeros(N_PARAMS)
    cfg = GeneratorConfig(params=params, k=args.k, seed=args.seed)
    data = generate_dataset(cfg, args.n, start=args.start)
    if args.day is not None:
        data.days = np.full(len(data), args.day)
        data.day_types = np.full(len(data), args.day_type, dtype=object)
    io.write_dataset(data, args.out)
    return {"out": args.out, "n": len(data), "k": data.n_routes, "seed": args.seed}


def _mcmc(args) -> McmcConfig:
    return McmcConfig(args.warmup, args.samples, args.target_accept, args.max_depth, args.seed)


def cmd_fit_static(args):
    data = io.read_dataset(args.data)
    post = fit_static(data, _mcmc(args))
    if data.days is not None and len(data):
        # the posterior is the prior for the day after the last recorded one
        post.day = int(data.days.max()) + 1
    io.save_particles(post, args.out)
    return {"out": args.out, "n_obs": len(data), "diagnostics": post.diagnostics,
            "summary": posterior_summary(post, args.level).to_dict()}


def cmd_fit_dynamic(args):
    data = io.read_dataset(args.store)
    if len(data) and data.days is None:
        raise ValidationError("the observation store needs a day on every line")
    store = ObservationStore(data)
    prev, scaler = _posterior(args.prev)
    today = args.day if args.day is not None else prev.day + 1
    wcfg = WeightingConfig(args.beta, args.amax, args.nmax, args.lambda_daytype)
    post, pruned = fit_dynamic_step(prev, store, today, wcfg, _mcmc(args), scaler,
                                    filtering=not args.no_filter, target_daytype=args.target_day_type)
    io.save_particles(post, args.out, scaler)
    if args.store_out:
        io.write_dataset(pruned.data, args.store_out)
    return {"out": args.out, "day": today, "diagnostics": post.diagnostics,
            "summary": posterior_summary(post, args.level).to_dict()}


def cmd_evaluate(args):
    data = io.read_dataset(args.data)
    post, scaler = _posterior(args.posterior)
    return {"accuracy": evaluate_accuracy(post.mean, scaler, data), "n_obs": len(data)}


def cmd_summary(args):
    post, _ = _posterior(args.posterior)
    out = posterior_summary(post, args.level).to_dict()
    out["day"] = post.day
    out["n_sample"] = len(post)
    return out


def cmd_select_routes(args):
    post, scaler = _posterior(args.posterior)
    z = io.load_user(args.user)
    candidates = io.load_routes(args.candidates)
    idx = select_routes(post.mean, scaler, z, candidates, args.k, args.seed)
    return {"indices": idx.tolist(), "routes": [io.route_to_json(candidates[i]) for i in idx]}


def cmd_rank_carpool(args):
    post, scaler = _posterior(args.posterior)
    offer = io.load_ride(args.ride)
    users, rides = io.load_candidates(args.candidates)
    penalties = io.load_json(args.penalties) if args.penalties else None
    return rank_carpool(offer, users, post.mean, scaler, rides, penalties).to_dict()


def cmd_incentive(args):
    post, scaler = _posterior(args.posterior)
    z = io.load_user(args.user)
    baseline, detour = io.load_route(args.baseline), io.load_route(args.detour)
    w_raw = raw_unit_weights(compute_weights(post.mean, z), scaler)
    out = {"weights_raw": w_raw.tolist(), "min_incentive": min_incentive(w_raw, baseline, detour).to_dict()}
    served = []
    if args.passengers:
        for rec in io.load_records(args.passengers):
            ride = io.route_from_json(rec["ride"]) if "ride" in rec else None
            served.append(ServedUser(io.features_from_json(rec["z"]),
                                     io.Route.from_array(io.route_from_json(rec["alternative"])),
                                     None if ride is None else io.Route.from_array(ride)))
    problem = IncentiveProblem(z, baseline, (Detour(detour, tuple(served)),), args.imax, args.step, args.kappa)
    out["optimal"] = optimize_incentive(problem, post.mean, scaler).to_dict()
    return out


def cmd_experiment(args):
    overrides = io.load_json(args.config) if args.config else None
    return run_experiment(args.name, overrides)


def _add_mcmc(p, warmup=500, samples=1000):
    p.add_argument("--warmup", type=int, default=warmup)
    p.add_argument("--samples", type=int, default=samples)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--max-depth", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--level", type=float, default=0.9, help="credible level of the printed summary")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="routepl", description="Generate, fit, evaluate and act on route-choice models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic JSONL dataset")
    p.add_argument("--params", help="ground-truth coefficients (JSON); zeros if omitted")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--start", type=int, default=0, help="index of the first observation stream")
    p.add_argument("--day", type=int, help="tag every observation with this recording day")
    p.add_argument("--day-type", default="weekday", choices=("weekday", "weekend"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("fit-static", help="NUTS fit on a full dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_mcmc(p)
    p.set_defaults(func=cmd_fit_static)

    p = sub.add_parser("fit-dynamic", help="one nightly sequential update")
    p.add_argument("--store", required=True, help="JSONL observations with day tags")
    p.add_argument("--prev", required=True, help="previous particle file")
    p.add_argument("--day", type=int, help="day being built; previous day + 1 by default")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--amax", type=int)
    p.add_argument("--nmax", type=int)
    p.add_argument("--lambda-daytype", type=float)
    p.add_argument("--target-day-type", choices=("weekday", "weekend"))
    p.add_argument("--no-filter", action="store_true", help="skip particle filtering")
    p.add_argument("--out", required=True)
    p.add_argument("--store-out", help="write the pruned store here")
    _add_mcmc(p, 300, 500)
    p.set_defaults(func=cmd_fit_dynamic)

    p = sub.add_parser("evaluate", help="top-choice accuracy of the posterior mean")
    p.add_argument("--data", required=True)
    p.add_argument("--posterior", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("summary", help="posterior means and credible intervals")
    p.add_argument("--posterior", required=True)
    p.add_argument("--level", type=float, default=0.9)
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("select-routes", help="pick k diverse high-value routes for a user")
    p.add_argument("--posterior", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_select_routes)

    p = sub.add_parser("rank-carpool", help="seat priority list for a ride")
    p.add_argument("--posterior", required=True)
    p.add_argument("--ride", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--penalties", help="JSON object of user id -> value penalty")
    p.set_defaults(func=cmd_rank_carpool)

    p = sub.add_parser("incentive", help="minimum and utility-optimal detour incentive")
    p.add_argument("--posterior", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--detour", required=True)
    p.add_argument("--user", required=True, help="driver features")
    p.add_argument("--passengers", help="passengers served by the detour (JSON/JSONL)")
    p.add_argument("--imax", type=float, default=20.0)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--kappa", type=float, default=0.0)
    p.set_defaults(func=cmd_incentive)

    p = sub.add_parser("experiment", help="run a synthetic-data experiment")
    p.add_argument("--name", required=True, choices=sorted(EXPERIMENTS))
    p.add_argument("--config", help="JSON object overriding experiment settings")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits with 2 on bad usage; bad usage is a validation error here
        return 1 if e.code == 2 else int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    warnings.simplefilter("default")
    try:
        result = args.func(args)
    except (ValidationError, KeyError, FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (NumericError, SamplerError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 2
    _emit(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
