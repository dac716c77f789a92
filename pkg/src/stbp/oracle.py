"""Ground truth for tiny instances and Monte Carlo checks of the chance constraint.

``brute_force_optimum`` is an exact dynamic program over time slots. The
state after slot ``t`` is the multiset of open hosts, each described by its
type, the number of already-paid slots left on its minimum term, and the
non-preemptible applications pinned to it. Each slot enumerates every
assignment of the active applications to open or newly opened hosts
(new hosts are labelled in order of first use, so relabelled duplicates are
never generated), then closes or keeps idle hosts. A host is billed its
``min_term`` when opened and one slot's price for every slot it stays open
beyond that, which equals ``price * max(min_term, end - start)`` for the
host's contiguous span.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AllocatedInstance, DemandDistribution, Portfolio, ProblemInstance, chance_feasible, market_allows
from .normal import norm_ppf

MAX_APPS = 4
MAX_TYPES = 4
MAX_HORIZON = 8


class OracleLimitError(ValueError):
    pass


@dataclass(frozen=True)
class _Bin:
    label: int
    type_idx: int
    prepaid: int  # paid slots left after the current one
    pinned: tuple[str, ...]  # non-preemptible apps bound to this host
    opened: int

    def key(self) -> tuple:
        return (self.type_idx, self.prepaid, self.pinned)


@dataclass
class _Node:
    cost: float
    bins: tuple[_Bin, ...]
    history: tuple | None  # (slot assignments, parent history); a persistent list
    spans: dict  # label -> (type_idx, start, last open slot)


def brute_force_optimum(problem: ProblemInstance, max_apps: int = MAX_APPS, max_types: int = MAX_TYPES,
                        max_horizon: int = MAX_HORIZON) -> tuple[Portfolio, float]:
    """Minimum-cost valid portfolio by exhaustive dynamic programming."""
    if len(problem.applications) > max_apps or len(problem.catalog) > max_types or problem.horizon > max_horizon:
        raise OracleLimitError(
            f"instance exceeds oracle limits (apps <= {max_apps}, types <= {max_types}, horizon <= {max_horizon})"
        )
    if not problem.applications:
        return Portfolio(), 0.0

    types = problem.catalog
    apps = sorted(problem.applications, key=lambda a: a.id)
    z = norm_ppf(problem.q_min)

    # every application alone on its cheapest fitting type is always valid
    bound = sum(min(_alone_cost(a, t) for t in types if market_allows(a, t) and _fits([a], t.capacity, problem.q_min, z))
                for a in apps) + 1e-9
    frontier: dict[tuple, _Node] = {(): _Node(0.0, (), None, {})}
    for t in range(problem.horizon):
        active = [a for a in apps if a.start <= t < a.end]
        nxt: dict[tuple, _Node] = {}
        for node in frontier.values():
            for cand in _expand(node, t, active, types, problem.q_min, z):
                if cand.cost > bound:
                    continue
                k = tuple(sorted(b.key() for b in cand.bins))
                best = nxt.get(k)
                if best is None or cand.cost < best.cost:
                    nxt[k] = cand
        frontier = nxt

    best = None
    for node in frontier.values():
        if all(not b.pinned for b in node.bins) and (best is None or node.cost < best.cost):
            best = node
    assert best is not None
    return _decode(best, problem), best.cost


def _expand(node: _Node, t: int, active, types, q_min: float, z: float):
    open_bins = list(node.bins)
    next_label = max(node.spans, default=-1) + 1
    pinned_at = {a: b.label for b in open_bins for a in b.pinned}
    free = [a for a in active if a.id not in pinned_at]
    by_label = {b.label: b for b in open_bins}

    # loads[label] -> list of apps placed at slot t
    def rec(k: int, loads: dict[int, list], new: list[int]):
        if k == len(free):
            yield dict(loads), list(new)
            return
        app = free[k]
        options = [b.label for b in open_bins] + [next_label + j for j in range(len(new))]
        seen = set()
        for label in options:
            tidx = by_label[label].type_idx if label in by_label else new[label - next_label]
            # bins with the same state and the same load so far are interchangeable
            sig = (by_label[label].key() if label in by_label else ("new", tidx),
                   tuple(a.id for a in loads.get(label, ())))
            if sig in seen:
                continue
            seen.add(sig)
            if not market_allows(app, types[tidx]):
                continue
            members = loads.get(label, []) + [app]
            if not _fits(members, types[tidx].capacity, q_min, z):
                continue
            loads[label] = members
            yield from rec(k + 1, loads, new)
            if len(members) == 1:
                del loads[label]
            else:
                loads[label] = members[:-1]
        for tidx, itype in enumerate(types):
            if not market_allows(app, itype) or not _fits([app], itype.capacity, q_min, z):
                continue
            label = next_label + len(new)
            new.append(tidx)
            loads[label] = [app]
            yield from rec(k + 1, loads, new)
            del loads[label]
            new.pop()

    base = {}
    for a in active:
        if a.id in pinned_at:
            base.setdefault(pinned_at[a.id], []).append(a)
    for label, members in base.items():
        if not _fits(members, types[by_label[label].type_idx].capacity, q_min, z):
            return

    for loads, new in rec(0, {k: list(v) for k, v in base.items()}, []):
        # keep/close choices for open hosts that are idle at t
        idle = [b for b in open_bins if b.label not in loads]
        optional = [b for b in idle if b.prepaid == 0 and types[b.type_idx].min_term > 1]
        forced_keep = [b for b in idle if b.prepaid > 0]
        for mask in range(1 << len(optional)):
            kept_idle = forced_keep + [b for j, b in enumerate(optional) if mask >> j & 1]
            cost = node.cost
            bins: list[_Bin] = []
            spans = dict(node.spans)
            for b in open_bins:
                if b.label in loads or b in kept_idle:
                    if b.prepaid > 0:
                        prepaid = b.prepaid - 1
                    else:
                        prepaid = 0
                        cost += types[b.type_idx].price_per_slot
                    members = loads.get(b.label, [])
                    pinned = tuple(sorted({*b.pinned, *(a.id for a in members if not a.preemptible)}))
                    pinned = tuple(p for p in pinned if _alive(p, active, t))
                    bins.append(_Bin(b.label, b.type_idx, prepaid, pinned, b.opened))
                    spans[b.label] = (b.type_idx, spans[b.label][1], t)
            for j, tidx in enumerate(new):
                label = next_label + j
                itype = types[tidx]
                cost += itype.price_per_slot * itype.min_term
                members = loads[label]
                pinned = tuple(sorted(a.id for a in members if not a.preemptible and a.end > t + 1))
                bins.append(_Bin(label, tidx, itype.min_term - 1, pinned, t))
                spans[label] = (tidx, t, t)
            history = ({label: tuple(a.id for a in members) for label, members in loads.items()}, node.history)
            yield _Node(cost, tuple(bins), history, spans)


def _alone_cost(app, itype) -> float:
    b, e = itype.billed_span(app.start, app.end)
    return itype.price_per_slot * (e - b)


def _alive(app_id: str, active, t: int) -> bool:
    for a in active:
        if a.id == app_id:
            return a.end > t + 1
    return False


def _fits(members, capacity: float, q_min: float, z: float) -> bool:
    demand = DemandDistribution(sum(a.demand_mean for a in members), sum(a.variance for a in members))
    return chance_feasible(demand, capacity, q_min, z=z)


def _decode(node: _Node, problem: ProblemInstance) -> Portfolio:
    slots = []
    h = node.history
    while h is not None:
        slots.append(h[0])
        h = h[1]
    slots.reverse()
    names = {label: f"i{k}" for k, label in enumerate(sorted(node.spans))}
    instances = []
    for label in sorted(node.spans):
        tidx, start, last = node.spans[label]
        itype = problem.catalog[tidx]
        b, e = itype.billed_span(start, last + 1)
        instances.append(AllocatedInstance(names[label], itype.id, b, e))
    assignments = {}
    for t, loads in enumerate(slots):
        for label, app_ids in loads.items():
            for a in app_ids:
                assignments[a, t] = names[label]
    return Portfolio(tuple(instances), assignments)


def monte_carlo_feasibility(demand: DemandDistribution, capacity: float, samples: int = 10**6,
                            seed: int = 0) -> float:
    """Fraction of draws from ``N(mean_sum, var_sum)`` that stay below capacity."""
    if samples < 10**4:
        raise ValueError("use at least 1e4 samples")
    rng = np.random.default_rng(seed)
    draws = rng.normal(demand.mean_sum, np.sqrt(demand.var_sum), size=samples)
    return float(np.count_nonzero(draws < capacity)) / samples
