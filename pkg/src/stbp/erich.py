"""Greedy four-stage first-fit-decreasing portfolio builder (ERICH).

Stage 1 sorts applications and instance types, stage 2 packs the
non-preemptible applications into reserved instances, stage 3 tries to swap
each reserved instance for on-demand capacity, and stage 4 fills preemptible
applications slot by slot into left-over capacity before opening spot hosts.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .model import Application, InstanceType, Market, Portfolio, ProblemInstance, UnsolvableError
from .packing import Packing


class TieBreak(str, enum.Enum):
    ID = "id"


@dataclass(frozen=True)
class ErichConfig:
    q_min: float | None = None  # overrides the problem's q_min when set
    tie_break: TieBreak = TieBreak.ID

    def __post_init__(self) -> None:
        if self.q_min is not None and not 0.0 <= self.q_min <= 1.0:
            raise ValueError("q_min must lie in [0, 1]")


@dataclass
class ErichTrace:
    """Portfolio snapshots after stages 2, 3 and 4 plus their costs."""

    portfolios: dict[str, Portfolio] = field(default_factory=dict)
    costs: dict[str, float] = field(default_factory=dict)

    def record(self, stage: str, pack: Packing) -> None:
        self.portfolios[stage] = pack.to_portfolio()
        self.costs[stage] = pack.cost()


def app_order_key(app: Application) -> tuple:
    return (app.start, -app.demand_std, app.id)


def sort_applications(apps: Iterable[Application]) -> list[Application]:
    """Increasing start, then non-increasing demand deviation, then id."""
    return sorted(apps, key=app_order_key)


def sort_catalog(types: Iterable[InstanceType]) -> list[InstanceType]:
    """Increasing price per unit capacity; ties prefer larger capacity, then id."""
    return sorted(types, key=lambda t: (t.price_per_slot / t.capacity, -t.capacity, t.id))


def _open_first_fitting(pack: Packing, app: Application, catalog: Sequence[InstanceType], t0: int, t1: int):
    for itype in catalog:
        if pack.fits_alone(app, itype):
            host = pack.open(itype, t0, t1)
            pack.assign(app, host, t0, t1)
            return host
    return None


def _open_cheapest(pack: Packing, app: Application, catalog: Sequence[InstanceType], t0: int, t1: int):
    """Open the fitting type with the lowest billed cost over ``[t0, t1)``."""
    fitting = [t for t in catalog if pack.fits_alone(app, t)]
    if not fitting:
        return None
    itype = min(fitting, key=lambda t: (t.price_per_slot * max(t.min_term, t1 - t0), t.id))
    host = pack.open(itype, t0, t1)
    pack.assign(app, host, t0, t1)
    return host


def stage2_pack_reserved(
    apps: Sequence[Application],
    catalog: Sequence[InstanceType],
    pack: Packing,
    fallback: Sequence[InstanceType] = (),
) -> Packing:
    """First-fit each non-preemptible app into reserved hosts covering its lifespan.

    ``fallback`` types (on-demand) are only tried when no reserved type can
    hold the application on its own.
    """
    reserved = {Market.RESERVED}
    backup = {t.market for t in fallback}
    for app in apps:
        host = pack.first_fit(app, app.start, app.end, reserved)
        if host is not None:
            pack.assign(app, host, app.start, app.end)
            continue
        if _open_first_fitting(pack, app, catalog, app.start, app.end) is not None:
            continue
        host = pack.first_fit(app, app.start, app.end, backup)
        if host is not None:
            pack.assign(app, host, app.start, app.end)
        elif _open_first_fitting(pack, app, fallback, app.start, app.end) is None:
            raise UnsolvableError(app.id)
    return pack


def stage3_reserved_to_ondemand(pack: Packing, catalog: Sequence[InstanceType]) -> Packing:
    """Single pass over reserved hosts; keep a replacement only if strictly cheaper."""
    if not catalog:
        return pack
    reserved_ids = [hid for hid, h in pack.hosts.items() if h.itype.market is Market.RESERVED]
    for hid in reserved_ids:
        if hid not in pack.hosts:
            continue
        members = sort_applications(pack.apps[a] for a in pack.hosts[hid].members)
        tmp = pack.copy()
        del tmp.hosts[hid]
        for app in members:
            tmp.host_of[app.id][:] = -1
        ok = True
        for app in members:
            host = tmp.first_fit(app, app.start, app.end)
            if host is not None:
                tmp.assign(app, host, app.start, app.end)
            elif _open_first_fitting(tmp, app, catalog, app.start, app.end) is None:
                ok = False
                break
        if ok and tmp.cost() < pack.cost():
            pack = tmp
    return pack


def stage4_pack_preemptible(
    apps: Sequence[Application],
    catalog: Sequence[InstanceType],
    pack: Packing,
    fallback: Sequence[InstanceType] = (),
) -> Packing:
    """Slot-wise first fit into existing hosts, then spot hosts for each gap.

    Gaps no spot type can hold go to the ``fallback`` type billed cheapest for that gap.
    """
    for app in apps:
        # per-slot first fit; hosts scanned in creation order claim free slots
        for host in list(pack.hosts.values()):
            for t0, t1 in pack.feasible_runs(app, host, only_free=True):
                pack.assign(app, host, t0, t1)
        for t0, t1 in pack.gaps(app):
            if _open_first_fitting(pack, app, catalog, t0, t1) is None:
                if _open_cheapest(pack, app, fallback, t0, t1) is None:
                    raise UnsolvableError(app.id)
    return pack


def erich_stages(problem: ProblemInstance, config: ErichConfig | None = None) -> tuple[Packing, ErichTrace]:
    config = config or ErichConfig()
    if config.q_min is not None and config.q_min != problem.q_min:
        problem = ProblemInstance(problem.applications, problem.catalog, problem.horizon, config.q_min)
    ordered = sort_applications(problem.applications)
    fixed = [a for a in ordered if not a.preemptible]
    flexible = [a for a in ordered if a.preemptible]
    reserved = sort_catalog(problem.types_in(Market.RESERVED))
    on_demand = sort_catalog(problem.types_in(Market.ON_DEMAND))
    spot = sort_catalog(problem.types_in(Market.SPOT))

    trace = ErichTrace()
    pack = stage2_pack_reserved(fixed, reserved, Packing(problem), fallback=on_demand)
    trace.record("stage2", pack)
    pack = stage3_reserved_to_ondemand(pack, on_demand)
    trace.record("stage3", pack)
    pack = stage4_pack_preemptible(flexible, spot, pack, fallback=on_demand + reserved)
    trace.record("stage4", pack)
    return pack, trace


def solve_erich(problem: ProblemInstance, config: ErichConfig | None = None) -> Portfolio:
    pack, trace = erich_stages(problem, config)
    return trace.portfolios["stage4"]
