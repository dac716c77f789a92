"""Mutable working state used by the solvers while they build a portfolio.

A :class:`Packing` tracks, per open host, the running mean and variance sums
of every slot in its span, so that placement checks are a vectorised test
over a slice. It converts to the immutable :class:`~stbp.model.Portfolio`
once a solver is done.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    AllocatedInstance,
    Application,
    InstanceType,
    Market,
    Portfolio,
    ProblemInstance,
    market_allows,
)
from .normal import norm_ppf


@dataclass
class Host:
    id: int
    itype: InstanceType
    start: int
    end: int
    mean: np.ndarray
    var: np.ndarray
    # app id -> slots held on this host
    members: dict[str, set[int]] = field(default_factory=dict)

    @property
    def cost(self) -> float:
        return self.itype.price_per_slot * (self.end - self.start)

    def covers(self, t0: int, t1: int) -> bool:
        return self.start <= t0 and t1 <= self.end

    def copy(self) -> Host:
        return Host(self.id, self.itype, self.start, self.end, self.mean.copy(), self.var.copy(),
                    {a: set(s) for a, s in self.members.items()})


def slots_feasible(mean: np.ndarray, var: np.ndarray, capacity: float, z: float) -> bool:
    """Vectorised chance test over a run of slots."""
    if math.isinf(z):
        if z < 0:
            return True
        return bool(np.all((var == 0.0) & (mean <= capacity)))
    return bool(np.all(mean + z * np.sqrt(var) <= capacity))


def runs(slots) -> list[tuple[int, int]]:
    """Sorted slots -> list of half-open contiguous runs."""
    out: list[tuple[int, int]] = []
    for t in sorted(slots):
        if out and out[-1][1] == t:
            out[-1] = (out[-1][0], t + 1)
        else:
            out.append((t, t + 1))
    return out


class Packing:
    def __init__(self, problem: ProblemInstance) -> None:
        self.problem = problem
        self.apps = problem.app_index
        self.z = norm_ppf(problem.q_min)
        self.hosts: dict[int, Host] = {}
        self.next_id = 0
        # app id -> host id per lifespan slot, -1 when unassigned
        self.host_of: dict[str, np.ndarray] = {
            a.id: np.full(a.length, -1, dtype=np.int64) for a in problem.applications
        }

    def copy(self) -> Packing:
        other = Packing.__new__(Packing)
        other.problem = self.problem
        other.apps = self.apps
        other.z = self.z
        other.hosts = {hid: h.copy() for hid, h in self.hosts.items()}
        other.next_id = self.next_id
        other.host_of = {a: arr.copy() for a, arr in self.host_of.items()}
        return other

    # -- hosts -----------------------------------------------------------

    def open(self, itype: InstanceType, start: int, end: int) -> Host:
        start, end = itype.billed_span(start, end)
        n = end - start
        host = Host(self.next_id, itype, start, end, np.zeros(n), np.zeros(n))
        self.hosts[host.id] = host
        self.next_id += 1
        return host

    def close(self, host_id: int) -> None:
        host = self.hosts[host_id]
        for app_id, slots in list(host.members.items()):
            self.unassign(self.apps[app_id], host, slots)
        del self.hosts[host_id]

    def cost(self) -> float:
        return sum(h.cost for h in self.hosts.values())

    def compact(self) -> None:
        """Drop empty hosts and shrink spans to the hull of their use."""
        for hid in [hid for hid, h in self.hosts.items() if not h.members]:
            del self.hosts[hid]
        for host in self.hosts.values():
            lo = min(min(s) for s in host.members.values())
            hi = max(max(s) for s in host.members.values()) + 1
            start, end = host.itype.billed_span(lo, hi)
            if (start, end) == (host.start, host.end):
                continue
            if end > host.end:
                # reserved host re-anchored at its first used slot
                pad = end - host.end
                host.mean = np.concatenate([host.mean, np.zeros(pad)])
                host.var = np.concatenate([host.var, np.zeros(pad)])
                host.end = end
            host.mean = host.mean[start - host.start:end - host.start].copy()
            host.var = host.var[start - host.start:end - host.start].copy()
            host.start, host.end = start, end

    # -- placement -------------------------------------------------------

    def fits(self, app: Application, host: Host, t0: int, t1: int) -> bool:
        if not host.covers(t0, t1) or not market_allows(app, host.itype):
            return False
        i0, i1 = t0 - host.start, t1 - host.start
        return slots_feasible(host.mean[i0:i1] + app.demand_mean, host.var[i0:i1] + app.variance,
                              host.itype.capacity, self.z)

    def feasible_runs(self, app: Application, host: Host, only_free: bool = False) -> list[tuple[int, int]]:
        """Runs of the app's lifespan where it could join ``host`` slot by slot."""
        lo, hi = max(app.start, host.start), min(app.end, host.end)
        if lo >= hi or not market_allows(app, host.itype):
            return []
        i0, i1 = lo - host.start, hi - host.start
        mean = host.mean[i0:i1] + app.demand_mean
        var = host.var[i0:i1] + app.variance
        if math.isinf(self.z):
            ok = np.ones(hi - lo, bool) if self.z < 0 else (var == 0.0) & (mean <= host.itype.capacity)
        else:
            ok = mean + self.z * np.sqrt(var) <= host.itype.capacity
        if only_free:
            ok &= self.host_of[app.id][lo - app.start:hi - app.start] < 0
        if not ok.any():
            return []
        edges = np.flatnonzero(np.diff(np.concatenate([[0], ok.astype(np.int8), [0]])))
        return [(lo + int(a), lo + int(b)) for a, b in zip(edges[::2], edges[1::2])]

    def fits_alone(self, app: Application, itype: InstanceType) -> bool:
        if not market_allows(app, itype):
            return False
        return slots_feasible(np.array([app.demand_mean]), np.array([app.variance]), itype.capacity, self.z)

    def assign(self, app: Application, host: Host, t0: int, t1: int) -> None:
        i0, i1 = t0 - host.start, t1 - host.start
        host.mean[i0:i1] += app.demand_mean
        host.var[i0:i1] += app.variance
        host.members.setdefault(app.id, set()).update(range(t0, t1))
        self.host_of[app.id][t0 - app.start:t1 - app.start] = host.id

    def unassign(self, app: Application, host: Host, slots) -> None:
        slots = set(slots)
        held = host.members.get(app.id, set())
        for t0, t1 in runs(slots & held):
            i0, i1 = t0 - host.start, t1 - host.start
            host.mean[i0:i1] -= app.demand_mean
            host.var[i0:i1] -= app.variance
            # clamp accumulated round-off
            np.maximum(host.var[i0:i1], 0.0, out=host.var[i0:i1])
            self.host_of[app.id][t0 - app.start:t1 - app.start] = -1
        held -= slots
        if not held:
            host.members.pop(app.id, None)

    def unassign_app(self, app: Application) -> None:
        for hid in sorted(set(self.host_of[app.id][self.host_of[app.id] >= 0].tolist())):
            host = self.hosts[hid]
            self.unassign(app, host, set(host.members.get(app.id, ())))

    def gaps(self, app: Application) -> list[tuple[int, int]]:
        free = self.host_of[app.id] < 0
        if not free.any():
            return []
        out: list[tuple[int, int]] = []
        edges = np.flatnonzero(np.diff(np.concatenate([[0], free.astype(np.int8), [0]])))
        for lo, hi in zip(edges[::2], edges[1::2]):
            out.append((app.start + int(lo), app.start + int(hi)))
        return out

    def first_fit(self, app: Application, t0: int, t1: int, markets=None) -> Host | None:
        for host in self.hosts.values():
            if markets is not None and host.itype.market not in markets:
                continue
            if self.fits(app, host, t0, t1):
                return host
        return None

    def hosts_of(self, app: Application) -> list[int]:
        arr = self.host_of[app.id]
        return sorted(set(arr[arr >= 0].tolist()))

    # -- output ----------------------------------------------------------

    def to_portfolio(self) -> Portfolio:
        """Freeze into a Portfolio with instance ids renumbered in creation order."""
        names = {hid: f"i{k}" for k, hid in enumerate(self.hosts)}
        instances = tuple(
            AllocatedInstance(names[h.id], h.itype.id, h.start, h.end) for h in self.hosts.values()
        )
        assignments: dict[tuple[str, int], str] = {}
        for app in self.problem.applications:
            arr = self.host_of[app.id]
            for k, hid in enumerate(arr.tolist()):
                if hid >= 0:
                    assignments[app.id, app.start + k] = names[hid]
        return Portfolio(instances, assignments)


def from_portfolio(portfolio: Portfolio, problem: ProblemInstance) -> Packing:
    """Rebuild working state from a (valid) portfolio."""
    pack = Packing(problem)
    ids: dict[str, Host] = {}
    for inst in portfolio.instances:
        itype = problem.type_index[inst.type_ref]
        n = inst.end - inst.start
        host = Host(pack.next_id, itype, inst.start, inst.end, np.zeros(n), np.zeros(n))
        pack.hosts[host.id] = host
        pack.next_id += 1
        ids[inst.id] = host
    by_host: dict[tuple[str, str], list[int]] = {}
    for (app_id, t), inst_id in portfolio.assignments.items():
        by_host.setdefault((app_id, inst_id), []).append(t)
    for (app_id, inst_id), slots in by_host.items():
        app = problem.app_index[app_id]
        for t0, t1 in runs(slots):
            pack.assign(app, ids[inst_id], t0, t1)
    return pack


NON_SPOT = frozenset({Market.RESERVED, Market.ON_DEMAND})
