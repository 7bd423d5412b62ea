"""JSON Lines persistence for datasets, particle sets and decision inputs.

Floats are written with ``repr`` precision, so every write/read pair is
bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .data import AGE_GROUPS, DAY_TYPES, DEFAULT_K, ChoiceData, Route, features_from_groups
from .decision import CandidateUser, RideOffer
from .exceptions import ParseError, ValidationError
from .model import N_PARAMS, as_param_matrix
from .posterior import ParticleSet
from .scaling import RouteScaler

PARTICLES_FORMAT = "routepl-particles"
PARTICLES_VERSION = 1


def features_to_json(z) -> dict:
    z = np.asarray(z, dtype=float)
    return {
        "age_group": AGE_GROUPS[int(np.argmax(z[:3]))],
        "ses": float(z[3]),
        "rain": int(z[4]),
        "slack": float(z[5]),
        "disability": int(z[6]),
    }


def features_from_json(obj) -> np.ndarray:
    if not isinstance(obj, dict):
        raise ValidationError("user features must be a JSON object")
    try:
        group = AGE_GROUPS.index(obj["age_group"])
    except ValueError:
        raise ValidationError(f"age_group must be one of {AGE_GROUPS}, got {obj['age_group']!r}") from None
    except KeyError as e:
        raise ValidationError(f"missing feature {e.args[0]!r}") from None
    try:
        rain, disability = obj["rain"], obj["disability"]
        if rain not in (0, 1) or disability not in (0, 1, 2):
            raise ValidationError("rain must be 0|1 and disability 0|1|2")
        return features_from_groups(group, float(obj["ses"]), int(rain), float(obj["slack"]), int(disability))
    except KeyError as e:
        raise ValidationError(f"missing feature {e.args[0]!r}") from None


def route_to_json(r) -> dict:
    return {"t": float(r[0]), "c": float(r[1]), "tw": float(r[2])}


def route_from_json(obj) -> np.ndarray:
    try:
        return np.array([float(obj["t"]), float(obj["c"]), float(obj["tw"])])
    except (KeyError, TypeError, ValueError):
        raise ValidationError("a route needs numeric fields t, c and tw") from None


def _jsonl_records(path):
    """Yield ``(line_number, byte_offset, object)`` for each nonblank line."""
    offset = 0
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            start = offset
            offset += len(raw)
            text = raw.strip()
            if not text:
                continue
            try:
                yield lineno, start, json.loads(text)
            except (json.JSONDecodeError, UnicodeDecodeError) as e:
                raise ParseError(f"malformed JSON in {path}: {e}", line=lineno, offset=start) from None


def observation_to_json(z, routes, choice, day=None, day_type=None) -> dict:
    rec = {"z": features_to_json(z), "routes": [route_to_json(r) for r in routes], "choice": int(choice)}
    if day is not None:
        rec["day"] = int(day)
    if day_type is not None:
        rec["day_type"] = str(day_type)
    return rec


def write_dataset(data: ChoiceData, path) -> None:
    with open(path, "w") as fh:
        for i in range(len(data)):
            rec = observation_to_json(
                data.features[i], data.routes[i], data.choices[i],
                None if data.days is None else data.days[i],
                None if data.day_types is None else data.day_types[i],
            )
            fh.write(json.dumps(rec) + "\n")


def read_dataset(path) -> ChoiceData:
    """Read a JSONL dataset; an empty file gives an empty dataset.

    ``day`` and ``day_type`` columns are kept only when every line has them.
    """
    z, routes, choices, days, day_types = [], [], [], [], []
    for lineno, offset, rec in _jsonl_records(path):
        try:
            if not isinstance(rec, dict):
                raise ValidationError("each line must be a JSON object")
            zi = features_from_json(rec.get("z"))
            ri = np.stack([route_from_json(r) for r in rec["routes"]])
            if routes and len(ri) != len(routes[0]):
                raise ValidationError(f"offer set has {len(ri)} routes, earlier lines have {len(routes[0])}")
            choice = rec["choice"]
            if isinstance(choice, bool) or not isinstance(choice, int):
                raise ValidationError("choice must be an integer")
            if not 0 <= choice < len(ri):
                raise ValidationError(f"choice {choice} out of range for {len(ri)} routes")
            if "day_type" in rec and rec["day_type"] not in DAY_TYPES:
                raise ValidationError(f"day_type must be one of {DAY_TYPES}")
            day = rec.get("day")
            if day is not None and (isinstance(day, bool) or not isinstance(day, int)):
                raise ValidationError("day must be an integer")
        except KeyError as e:
            raise ValidationError(f"{path} line {lineno}: missing field {e.args[0]!r}") from None
        except ValidationError as e:
            raise ValidationError(f"{path} line {lineno}: {e}") from None
        z.append(zi)
        routes.append(ri)
        choices.append(choice)
        days.append(day)
        day_types.append(rec.get("day_type"))
    if not z:
        return ChoiceData.empty(DEFAULT_K)
    return ChoiceData(
        np.stack(z), np.stack(routes), np.array(choices),
        None if any(d is None for d in days) else np.array(days),
        None if any(d is None for d in day_types) else np.array(day_types, dtype=object),
    )


def save_particles(particles: ParticleSet, path, scaler: Optional[RouteScaler] = None) -> None:
    """Metadata line followed by one JSON array per draw."""
    scaler = scaler if scaler is not None else particles.scaler
    meta = {
        "format": PARTICLES_FORMAT,
        "version": PARTICLES_VERSION,
        "d": int(particles.particles.shape[1]),
        "n_sample": len(particles),
        "day": int(particles.day),
        "scaler": None if scaler is None else scaler.to_dict(),
        "diagnostics": _jsonable(particles.diagnostics),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(meta) + "\n")
        for row in particles.particles:
            fh.write(json.dumps([float(x) for x in row]) + "\n")


def load_particles(path) -> tuple[ParticleSet, Optional[RouteScaler]]:
    records = _jsonl_records(path)
    try:
        _, _, meta = next(records)
    except StopIteration:
        raise ParseError(f"{path} is empty; expected a particle metadata line", line=1, offset=0) from None
    if not isinstance(meta, dict) or meta.get("format") != PARTICLES_FORMAT:
        raise ValidationError(f"{path} is not a particle file")
    if meta.get("version") != PARTICLES_VERSION:
        raise ValidationError(f"unsupported particle file version {meta.get('version')!r}")
    if meta.get("d") != N_PARAMS:
        raise ValidationError(f"particle dimension {meta.get('d')!r} does not match the model's {N_PARAMS}")
    rows = []
    end = 0
    for lineno, offset, row in records:
        end = offset
        if not isinstance(row, list) or len(row) != N_PARAMS:
            raise ParseError(f"expected a list of {N_PARAMS} numbers", line=lineno, offset=offset)
        rows.append(row)
    size = Path(path).stat().st_size
    if len(rows) != meta.get("n_sample"):
        raise ParseError(f"expected {meta.get('n_sample')} particles, found {len(rows)}; file truncated?",
                         offset=size)
    with open(path, "rb") as fh:
        fh.seek(max(size - 1, 0))
        if fh.read(1) != b"\n":
            raise ParseError("last particle line is not terminated; file truncated?", offset=end)
    scaler = None
    if meta.get("scaler") is not None:
        scaler = RouteScaler.from_moments(meta["scaler"]["mean"], meta["scaler"]["std"])
    ps = ParticleSet(np.array(rows, dtype=float), int(meta["day"]), scaler, meta.get("diagnostics") or {})
    return ps, scaler


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.generic,)):
            v = v.item()
        if isinstance(v, (bool, int, float, str)) or v is None:
            out[k] = v
    return out


def load_params(path) -> np.ndarray:
    """Read a flat 14-vector from ``{"a2": [...], "a3": [...]}``, a posterior
    summary (its ``mean``), or a bare list of 14 numbers."""
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"malformed JSON in {path}: {e}", line=e.lineno) from None
    if isinstance(obj, dict) and "mean" in obj:
        obj = obj["mean"]
    if isinstance(obj, dict):
        try:
            obj = [obj["a2"], obj["a3"]]
        except KeyError:
            raise ValidationError("parameter file needs keys a2 and a3") from None
    try:
        return as_param_matrix(np.array(obj, dtype=float)).reshape(-1).copy()
    except (TypeError, ValueError) as e:
        raise ValidationError(f"bad parameter file {path}: {e}") from None


def params_to_json(params) -> dict:
    a = as_param_matrix(params)
    return {"a2": a[0].tolist(), "a3": a[1].tolist()}


def load_json(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"malformed JSON in {path}: {e}", line=e.lineno) from None


def load_records(path) -> list:
    """A JSON array or a JSONL file of objects."""
    text = Path(path).read_text().strip()
    if text.startswith("["):
        return load_json(path)
    return [rec for _, _, rec in _jsonl_records(path)]


def load_user(path) -> np.ndarray:
    obj = load_json(path)
    return features_from_json(obj.get("z", obj) if isinstance(obj, dict) else obj)


def load_routes(path) -> np.ndarray:
    recs = load_records(path)
    if not recs:
        return np.zeros((0, 3))
    return np.stack([route_from_json(r) for r in recs])


def load_route(path) -> Route:
    return Route.from_array(route_from_json(load_json(path)))


def load_ride(path) -> RideOffer:
    obj = load_json(path)
    try:
        return RideOffer(Route.from_array(route_from_json(obj["route"])), int(obj["capacity"]),
                         str(obj.get("driver_id", "driver")), frozenset(obj.get("driver_vetoes", ())))
    except KeyError as e:
        raise ValidationError(f"ride file needs field {e.args[0]!r}") from None


def load_candidates(path) -> tuple[list, dict]:
    """Car-pool candidates and any per-candidate ride routes."""
    users, rides = [], {}
    for i, rec in enumerate(load_records(path), start=1):
        try:
            uid = str(rec["id"])
            users.append(CandidateUser(
                uid, features_from_json(rec["z"]), bool(rec.get("reduced_mobility", False)),
                float(rec.get("walking_time_to_pickup", 0.0)), rec.get("emission_savings"),
                frozenset(str(v) for v in rec.get("vetoes", ())),
            ))
        except KeyError as e:
            raise ValidationError(f"candidate {i}: missing field {e.args[0]!r}") from None
        if "route" in rec:
            rides[uid] = Route.from_array(route_from_json(rec["route"]))
    return users, rides
