"""Scenario and solution files (JSON) and metric reports (CSV).

Files are schema-checked with ``jsonschema``; unknown fields and non-finite
numbers are rejected. Costs are written as fixed six-digit decimals so that
reports compare byte for byte across runs.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema

from .datagen import AppSetProfile, TypeSetProfile
from .model import (
    AllocatedInstance,
    Application,
    InstanceType,
    Market,
    Portfolio,
    ProblemError,
    ProblemInstance,
    UndefinedMetricError,
    mean_utilization,
    portfolio_cost,
    weighted_utilization,
)


class FileFormatError(ValueError):
    """A file that cannot be read, parsed or matched to its schema."""


_ID = {"type": "string", "minLength": 1}
_NUM = {"type": "number"}
_SLOT = {"type": "integer", "minimum": 0}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["q_min", "horizon", "applications", "instance_types"],
    "properties": {
        "q_min": {"type": "number", "minimum": 0, "maximum": 1},
        "horizon": _SLOT,
        "applications": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "start", "end", "preemptible", "demand_mean", "demand_std"],
                "properties": {
                    "id": _ID,
                    "start": _SLOT,
                    "end": _SLOT,
                    "preemptible": {"type": "boolean"},
                    "demand_mean": {"type": "number", "exclusiveMinimum": 0},
                    "demand_std": {"type": "number", "minimum": 0},
                },
            },
        },
        "instance_types": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "market", "capacity", "price_per_slot"],
                "properties": {
                    "id": _ID,
                    "market": {"enum": [m.value for m in Market]},
                    "capacity": {"type": "number", "exclusiveMinimum": 0},
                    "price_per_slot": {"type": "number", "exclusiveMinimum": 0},
                    "min_term": {"type": "integer", "minimum": 1},
                },
            },
        },
    },
}

SOLUTION_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["instances", "assignments"],
    "properties": {
        "algorithm": {"type": "string"},
        "q_min": {"type": "number", "minimum": 0, "maximum": 1},
        "total_cost": {"type": "string", "pattern": r"^-?\d+\.\d{6}$"},
        "instances": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "type", "start", "end"],
                "properties": {"id": _ID, "type": _ID, "start": _SLOT, "end": _SLOT},
            },
        },
        "assignments": {
            "type": "array",
            "items": {
                "type": "array",
                "prefixItems": [_ID, _SLOT, _ID],
                "items": False,
                "minItems": 3,
            },
        },
    },
}

_PAIR = {"type": "array", "prefixItems": [_NUM, _NUM], "items": False, "minItems": 2}

PROFILE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["applications", "instance_types"],
    "properties": {
        "applications": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_non_preemptible", "n_preemptible", "mean_demand", "std_demand",
                         "mean_sigma", "std_sigma", "mean_periods", "std_periods", "horizon"],
            "properties": {
                "n_non_preemptible": {"type": "integer", "minimum": 0},
                "n_preemptible": {"type": "integer", "minimum": 0},
                "mean_demand": _NUM, "std_demand": _NUM,
                "mean_sigma": _NUM, "std_sigma": _NUM,
                "mean_periods": _NUM, "std_periods": _NUM,
                "horizon": {"type": "integer", "minimum": 1},
            },
        },
        "instance_types": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_types", "mean_capacity", "std_capacity",
                         "reserved_price", "on_demand_price", "spot_price"],
            "properties": {
                "n_types": {"type": "integer", "minimum": 1},
                "mean_capacity": _NUM, "std_capacity": _NUM,
                "reserved_price": _PAIR, "on_demand_price": _PAIR, "spot_price": _PAIR,
                "reserved_min_term_range": {
                    "type": "array", "prefixItems": [_SLOT, _SLOT], "items": False, "minItems": 2,
                },
            },
        },
    },
}


def format_cost(value: float) -> str:
    return f"{value:.6f}"


# -- low-level ----------------------------------------------------------------


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name} is not allowed")


def _load_json(path: str | os.PathLike, schema: dict) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileFormatError(f"{path}: {exc.strerror or exc}") from exc
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    error = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(schema).iter_errors(doc))
    if error is not None:
        where = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in error.absolute_path)
        raise FileFormatError(f"{path}: {where.lstrip('.') or '<root>'}: {error.message}")
    return doc


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def write_atomic(path: str | os.PathLike, text: str) -> None:
    """Write via a temporary sibling so readers never see a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


# -- scenarios ------------------------------------------------------------------


def scenario_to_dict(problem: ProblemInstance) -> dict:
    return {
        "q_min": problem.q_min,
        "horizon": problem.horizon,
        "applications": [
            {"id": a.id, "start": a.start, "end": a.end, "preemptible": a.preemptible,
             "demand_mean": a.demand_mean, "demand_std": a.demand_std}
            for a in problem.applications
        ],
        "instance_types": [
            {"id": t.id, "market": t.market.value, "capacity": t.capacity,
             "price_per_slot": t.price_per_slot, "min_term": t.min_term}
            for t in problem.catalog
        ],
    }


def scenario_from_dict(doc: dict, source: str = "<scenario>") -> ProblemInstance:
    try:
        apps = tuple(
            Application(a["id"], a["start"], a["end"], a["preemptible"],
                        float(a["demand_mean"]), float(a["demand_std"]))
            for a in doc["applications"]
        )
        types = tuple(
            InstanceType(t["id"], Market(t["market"]), float(t["capacity"]),
                         float(t["price_per_slot"]), t.get("min_term", 1))
            for t in doc["instance_types"]
        )
        return ProblemInstance(apps, types, doc["horizon"], float(doc["q_min"]))
    except ProblemError as exc:
        raise FileFormatError(f"{source}: {exc}") from exc


def read_scenario(path: str | os.PathLike) -> ProblemInstance:
    return scenario_from_dict(_load_json(path, SCENARIO_SCHEMA), str(path))


def read_profile(path: str | os.PathLike) -> tuple[AppSetProfile, TypeSetProfile]:
    doc = _load_json(path, PROFILE_SCHEMA)
    types = dict(doc["instance_types"])
    for key in ("reserved_price", "on_demand_price", "spot_price", "reserved_min_term_range"):
        if key in types:
            types[key] = tuple(types[key])
    try:
        return AppSetProfile(**doc["applications"]), TypeSetProfile(**types)
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


# -- solutions ------------------------------------------------------------------


def solution_to_dict(portfolio: Portfolio, problem: ProblemInstance, algorithm: str) -> dict:
    return {
        "algorithm": algorithm,
        "q_min": problem.q_min,
        "total_cost": format_cost(portfolio_cost(portfolio, problem.type_index)),
        "instances": [
            {"id": i.id, "type": i.type_ref, "start": i.start, "end": i.end} for i in portfolio.instances
        ],
        "assignments": [[a, t, inst] for (a, t), inst in sorted(portfolio.assignments.items())],
    }


def solution_from_dict(doc: dict, problem: ProblemInstance, source: str = "<solution>") -> Portfolio:
    known = problem.app_index
    for k, (app_id, _t, _inst) in enumerate(doc["assignments"]):
        if app_id not in known:
            raise FileFormatError(f"{source}: assignments[{k}]: unknown application {app_id!r}")
    try:
        instances = tuple(AllocatedInstance(i["id"], i["type"], i["start"], i["end"]) for i in doc["instances"])
    except ProblemError as exc:
        raise FileFormatError(f"{source}: {exc}") from exc
    assignments: dict[tuple[str, int], str] = {}
    for k, (app_id, t, inst) in enumerate(doc["assignments"]):
        if (app_id, t) in assignments:
            raise FileFormatError(f"{source}: assignments[{k}]: {app_id!r} assigned twice at slot {t}")
        assignments[app_id, t] = inst
    return Portfolio(instances, assignments)


def read_solution(path: str | os.PathLike, problem: ProblemInstance) -> Portfolio:
    return solution_from_dict(_load_json(path, SOLUTION_SCHEMA), problem, str(path))


# -- reports --------------------------------------------------------------------

REPORT_FIELDS = ("solver", "case_id", "seed", "total_cost", "n_instances",
                 "mean_utilization", "weighted_utilization", "wall_time_ms")
GENERATION_FIELDS = ("generation", "min_cost", "mean_cost", "max_cost")


@dataclass(frozen=True)
class ReportRow:
    solver: str
    case_id: str
    seed: int | None
    total_cost: float
    n_instances: int | None = None
    mean_utilization: float | None = None
    weighted_utilization: float | None = None
    wall_time_ms: float | None = None  # None leaves the column blank

    @classmethod
    def for_portfolio(cls, solver: str, case_id: str, seed: int | None, portfolio: Portfolio,
                      problem: ProblemInstance, wall_time_ms: float | None) -> ReportRow:
        try:
            mean_u = mean_utilization(portfolio, problem.app_index, problem.type_index)
            weighted_u = weighted_utilization(portfolio, problem.app_index, problem.type_index)
        except UndefinedMetricError:
            mean_u = weighted_u = None
        return cls(solver, case_id, seed, portfolio_cost(portfolio, problem.type_index),
                   len(portfolio.instances), mean_u, weighted_u, wall_time_ms)

    def cells(self) -> list[str]:
        def num(x, fmt="{:.6f}"):
            return "" if x is None else fmt.format(x)
        return [self.solver, self.case_id, num(self.seed, "{}"), format_cost(self.total_cost),
                num(self.n_instances, "{}"), num(self.mean_utilization), num(self.weighted_utilization),
                num(self.wall_time_ms, "{:.3f}")]


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def append_report(path: str | os.PathLike, rows: Sequence[ReportRow]) -> None:
    """Append rows, writing the header when the file is new."""
    path = Path(path)
    old = path.read_text(encoding="utf-8") if path.exists() else ""
    new = _csv_text(REPORT_FIELDS, (r.cells() for r in rows))
    if old:
        if not old.startswith(",".join(REPORT_FIELDS)):
            raise FileFormatError(f"{path}: existing file is not a report")
        new = old + new.split("\n", 1)[1]
    write_atomic(path, new)


def report_text(rows: Sequence[ReportRow]) -> str:
    return _csv_text(REPORT_FIELDS, (r.cells() for r in rows))


def generations_text(stats) -> str:
    return _csv_text(GENERATION_FIELDS, (
        [str(s.generation), format_cost(s.min_cost), format_cost(s.mean_cost), format_cost(s.max_cost)]
        for s in stats
    ))
