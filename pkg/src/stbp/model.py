"""Domain types, the chance-constrained capacity test, cost and metrics.

All intervals are half-open ``[start, end)``; the duration of an interval is
``end - start``.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

from .normal import norm_ppf


class Market(str, enum.Enum):
    RESERVED = "reserved"
    ON_DEMAND = "on-demand"
    SPOT = "spot"


class ProblemError(ValueError):
    """A problem instance violates a load-time invariant."""


class UnsolvableError(ProblemError):
    """No instance type can host an application on its own."""

    def __init__(self, app_id: str, reason: str = "no suitable instance type fits it alone") -> None:
        self.app_id = app_id
        super().__init__(f"application {app_id!r} is unsolvable: {reason}")


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class Application:
    id: str
    start: int
    end: int
    preemptible: bool
    demand_mean: float
    demand_std: float

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ProblemError(f"application {self.id!r}: start {self.start} must be < end {self.end}")
        if not self.demand_mean > 0:
            raise ProblemError(f"application {self.id!r}: demand_mean must be > 0")
        if not self.demand_std >= 0:
            raise ProblemError(f"application {self.id!r}: demand_std must be >= 0")

    @property
    def variance(self) -> float:
        return self.demand_std * self.demand_std

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class InstanceType:
    id: str
    market: Market
    capacity: float
    price_per_slot: float
    min_term: int = 1

    def __post_init__(self) -> None:
        if not isinstance(self.market, Market):
            object.__setattr__(self, "market", Market(self.market))
        if not self.capacity > 0:
            raise ProblemError(f"instance type {self.id!r}: capacity must be > 0")
        if not self.price_per_slot > 0:
            raise ProblemError(f"instance type {self.id!r}: price_per_slot must be > 0")
        if self.min_term < 1:
            raise ProblemError(f"instance type {self.id!r}: min_term must be >= 1")
        if self.market is not Market.RESERVED and self.min_term != 1:
            raise ProblemError(f"instance type {self.id!r}: only reserved types carry a min_term")

    @property
    def spot_only(self) -> bool:
        """The O_i flag: hosts preemptible applications only."""
        return self.market is Market.SPOT

    def billed_span(self, start: int, end: int) -> tuple[int, int]:
        """Span actually purchased to cover ``[start, end)``."""
        return start, max(end, start + self.min_term)


@dataclass(frozen=True)
class AllocatedInstance:
    id: str
    type_ref: str
    start: int
    end: int

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ProblemError(f"instance {self.id!r}: start {self.start} must be < end {self.end}")

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class Portfolio:
    """Allocated instances plus the ``(app id, slot) -> instance id`` map."""

    instances: tuple[AllocatedInstance, ...] = ()
    assignments: Mapping[tuple[str, int], str] = field(default_factory=dict)

    @cached_property
    def instance_index(self) -> dict[str, AllocatedInstance]:
        return {inst.id: inst for inst in self.instances}

    @cached_property
    def occupants(self) -> dict[tuple[str, int], list[str]]:
        """``(instance id, slot) -> app ids`` in insertion order."""
        out: dict[tuple[str, int], list[str]] = defaultdict(list)
        for (app_id, t), inst_id in self.assignments.items():
            out[inst_id, t].append(app_id)
        return dict(out)


@dataclass(frozen=True)
class DemandDistribution:
    mean_sum: float = 0.0
    var_sum: float = 0.0

    def __post_init__(self) -> None:
        if self.var_sum < 0:
            raise ValueError("var_sum must be >= 0")

    def plus(self, app: Application) -> DemandDistribution:
        return DemandDistribution(self.mean_sum + app.demand_mean, self.var_sum + app.variance)


@dataclass(frozen=True)
class ProblemInstance:
    applications: tuple[Application, ...]
    catalog: tuple[InstanceType, ...]
    horizon: int
    q_min: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "applications", tuple(self.applications))
        object.__setattr__(self, "catalog", tuple(self.catalog))
        if not 0.0 <= self.q_min <= 1.0:
            raise ProblemError(f"q_min must lie in [0, 1], got {self.q_min}")
        if self.horizon < 0:
            raise ProblemError("horizon must be >= 0")
        if len(self.app_index) != len(self.applications):
            raise ProblemError("duplicate application ids")
        if len(self.type_index) != len(self.catalog):
            raise ProblemError("duplicate instance type ids")
        for app in self.applications:
            if app.start < 0 or app.end > self.horizon:
                raise ProblemError(f"application {app.id!r} lies outside [0, {self.horizon})")
        if any(not a.preemptible for a in self.applications) and all(t.spot_only for t in self.catalog):
            raise ProblemError("non-preemptible applications present but the catalog is spot-only")
        z = norm_ppf(self.q_min)
        for app in self.applications:
            single = DemandDistribution(app.demand_mean, app.variance)
            if not any(
                market_allows(app, t) and chance_feasible(single, t.capacity, self.q_min, z=z)
                for t in self.catalog
            ):
                raise UnsolvableError(app.id)

    @cached_property
    def app_index(self) -> dict[str, Application]:
        return {a.id: a for a in self.applications}

    @cached_property
    def type_index(self) -> dict[str, InstanceType]:
        return {t.id: t for t in self.catalog}

    def types_in(self, market: Market) -> list[InstanceType]:
        return [t for t in self.catalog if t.market is market]


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    app: str | None = None
    instance: str | None = None
    slot: int | None = None

    def __str__(self) -> str:
        return f"{self.kind}: {self.message}"


def market_allows(app: Application, itype: InstanceType) -> bool:
    """Spot instances only take preemptible applications."""
    return app.preemptible or not itype.spot_only


def aggregated_demand(
    portfolio: Portfolio, instance_id: str, slot: int, apps: Mapping[str, Application]
) -> DemandDistribution:
    inst = portfolio.instance_index.get(instance_id)
    if inst is None:
        raise KeyError(f"unknown instance {instance_id!r}")
    if not inst.start <= slot < inst.end:
        raise ValueError(f"slot {slot} outside instance span [{inst.start}, {inst.end})")
    mean = var = 0.0
    for app_id in portfolio.occupants.get((instance_id, slot), ()):
        app = apps[app_id]
        mean += app.demand_mean
        var += app.variance
    return DemandDistribution(mean, var)


def chance_feasible(
    demand: DemandDistribution,
    capacity: float,
    q_min: float,
    *,
    tol: float = 0.0,
    z: float | None = None,
) -> bool:
    """Deterministic equivalent of ``P(D < capacity) >= q_min`` for normal ``D``.

    ``mean + z(q_min) * sd <= capacity``; with zero variance this reduces to
    ``mean <= capacity``. ``tol`` widens the capacity (used when re-checking
    sums that were accumulated in a different order).
    """
    if not 0.0 <= q_min <= 1.0:
        raise ValueError(f"q_min must lie in [0, 1], got {q_min!r}")
    if q_min == 0.0:
        return True
    if z is None:
        z = norm_ppf(q_min)
    limit = capacity + tol
    if demand.var_sum == 0.0:
        return demand.mean_sum <= limit
    if math.isinf(z):
        return z < 0
    return demand.mean_sum + z * math.sqrt(demand.var_sum) <= limit


def can_host(
    app: Application,
    instance: AllocatedInstance,
    slot_range: tuple[int, int],
    portfolio: Portfolio,
    q_min: float,
    apps: Mapping[str, Application],
    catalog: Mapping[str, InstanceType],
) -> bool:
    t0, t1 = slot_range
    if not t0 < t1:
        raise ValueError("empty slot range")
    itype = catalog[instance.type_ref]
    if t0 < instance.start or t1 > instance.end:
        return False
    if not market_allows(app, itype):
        return False
    z = norm_ppf(q_min)
    for t in range(t0, t1):
        demand = aggregated_demand(portfolio, instance.id, t, apps)
        if any(a == app.id for a in portfolio.occupants.get((instance.id, t), ())):
            return False
        if not chance_feasible(demand.plus(app), itype.capacity, q_min, z=z):
            return False
    return True


def portfolio_cost(portfolio: Portfolio, catalog: Mapping[str, InstanceType]) -> float:
    total = 0.0
    for inst in portfolio.instances:
        itype = catalog.get(inst.type_ref)
        if itype is None:
            raise KeyError(f"instance {inst.id!r} references unknown type {inst.type_ref!r}")
        total += itype.price_per_slot * (inst.end - inst.start)
    return total


def _expected_load(portfolio: Portfolio, apps: Mapping[str, Application]) -> dict[str, float]:
    load: dict[str, float] = defaultdict(float)
    for (app_id, _t), inst_id in portfolio.assignments.items():
        load[inst_id] += apps[app_id].demand_mean
    return load


def utilization_rate(
    portfolio: Portfolio,
    instance_id: str,
    apps: Mapping[str, Application],
    catalog: Mapping[str, InstanceType],
) -> float:
    """Expected assigned demand over provided capacity across the instance span."""
    inst = portfolio.instance_index[instance_id]
    used = sum(
        apps[a].demand_mean
        for t in range(inst.start, inst.end)
        for a in portfolio.occupants.get((instance_id, t), ())
    )
    return used / (catalog[inst.type_ref].capacity * inst.duration)


def utilization_rates(
    portfolio: Portfolio, apps: Mapping[str, Application], catalog: Mapping[str, InstanceType]
) -> dict[str, float]:
    load = _expected_load(portfolio, apps)
    return {
        inst.id: load.get(inst.id, 0.0) / (catalog[inst.type_ref].capacity * inst.duration)
        for inst in portfolio.instances
    }


def mean_utilization(
    portfolio: Portfolio, apps: Mapping[str, Application], catalog: Mapping[str, InstanceType]
) -> float:
    if not portfolio.instances:
        raise UndefinedMetricError("utilization of an empty portfolio is undefined")
    rates = utilization_rates(portfolio, apps, catalog)
    return sum(rates.values()) / len(rates)


def weighted_utilization(
    portfolio: Portfolio, apps: Mapping[str, Application], catalog: Mapping[str, InstanceType]
) -> float:
    """Duration-weighted mean of per-instance utilization rates."""
    if not portfolio.instances:
        raise UndefinedMetricError("utilization of an empty portfolio is undefined")
    rates = utilization_rates(portfolio, apps, catalog)
    num = sum(inst.duration * rates[inst.id] for inst in portfolio.instances)
    den = sum(inst.duration for inst in portfolio.instances)
    return num / den


def validate(portfolio: Portfolio, problem: ProblemInstance, *, rel_tol: float = 1e-9) -> list[Violation]:
    """Re-check every constraint from the raw assignment map.

    Returns one :class:`Violation` per breach; an empty list means the
    portfolio is a feasible solution of ``problem``.
    """
    apps = problem.app_index
    catalog = problem.type_index
    out: list[Violation] = []

    instances: dict[str, AllocatedInstance] = {}
    for inst in portfolio.instances:
        if inst.id in instances:
            out.append(Violation("DuplicateInstance", f"instance id {inst.id!r} used twice", instance=inst.id))
            continue
        instances[inst.id] = inst
        itype = catalog.get(inst.type_ref)
        if itype is None:
            out.append(Violation("UnknownType", f"instance {inst.id!r} has unknown type {inst.type_ref!r}",
                                 instance=inst.id))
        elif inst.duration < itype.min_term:
            out.append(Violation("MinTermViolation",
                                 f"instance {inst.id!r} spans {inst.duration} slots, min_term is {itype.min_term}",
                                 instance=inst.id))

    hosts_of: dict[str, set[str]] = defaultdict(set)
    per_slot: dict[tuple[str, int], list[Application]] = defaultdict(list)
    for (app_id, t), inst_id in portfolio.assignments.items():
        app = apps.get(app_id)
        inst = instances.get(inst_id)
        if app is None:
            out.append(Violation("UnknownApplication", f"assignment names unknown app {app_id!r}",
                                 app=app_id, slot=t))
            continue
        if inst is None:
            out.append(Violation("UnknownInstance", f"app {app_id!r} assigned to unknown instance {inst_id!r}",
                                 app=app_id, instance=inst_id, slot=t))
            continue
        if not app.start <= t < app.end:
            out.append(Violation("OutsideLifespan", f"app {app_id!r} assigned at slot {t} outside its lifespan",
                                 app=app_id, instance=inst_id, slot=t))
        if not inst.start <= t < inst.end:
            out.append(Violation("OutsideInstanceSpan",
                                 f"app {app_id!r} assigned to {inst_id!r} at slot {t} outside its span",
                                 app=app_id, instance=inst_id, slot=t))
        itype = catalog.get(inst.type_ref)
        if itype is not None and not market_allows(app, itype):
            out.append(Violation("MarketViolation",
                                 f"non-preemptible app {app_id!r} on spot instance {inst_id!r}",
                                 app=app_id, instance=inst_id, slot=t))
        hosts_of[app_id].add(inst_id)
        per_slot[inst_id, t].append(app)

    for app in problem.applications:
        for t in range(app.start, app.end):
            if (app.id, t) not in portfolio.assignments:
                out.append(Violation("MissingAssignment", f"app {app.id!r} unassigned at slot {t}",
                                     app=app.id, slot=t))
        if not app.preemptible and len(hosts_of.get(app.id, ())) > 1:
            out.append(Violation("SplitHost",
                                 f"non-preemptible app {app.id!r} uses {len(hosts_of[app.id])} instances",
                                 app=app.id))

    z = norm_ppf(problem.q_min)
    for inst in instances.values():
        itype = catalog.get(inst.type_ref)
        if itype is None:
            continue
        tol = rel_tol * max(1.0, itype.capacity)
        for t in range(inst.start, inst.end):
            members = per_slot.get((inst.id, t))
            if not members:
                continue
            demand = DemandDistribution(sum(a.demand_mean for a in members), sum(a.variance for a in members))
            if not chance_feasible(demand, itype.capacity, problem.q_min, tol=tol, z=z):
                out.append(Violation("CapacityViolation",
                                     f"instance {inst.id!r} over capacity at slot {t} "
                                     f"(mean {demand.mean_sum:.4f}, var {demand.var_sum:.4f}, "
                                     f"capacity {itype.capacity})",
                                     instance=inst.id, slot=t))
    return out


def lifespan_gaps(slots: Iterable[int], start: int, end: int) -> list[tuple[int, int]]:
    """Maximal runs of ``[start, end)`` not contained in ``slots``."""
    taken = set(slots)
    gaps: list[tuple[int, int]] = []
    t = start
    while t < end:
        if t in taken:
            t += 1
            continue
        g = t
        while t < end and t not in taken:
            t += 1
        gaps.append((g, t))
    return gaps
