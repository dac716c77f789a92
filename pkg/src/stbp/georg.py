"""Grouping genetic algorithm over a temporal group encoding (GEORG).

Each chromosome wraps a :class:`~stbp.packing.Packing`; its genes are the
per-slot maps ``host id -> app ids``. Offspring come from a utilisation-biased
zip-merge crossover, an optional temporal-dominance mutation, and a random
first-fit repair that reinserts orphaned applications.

Every random draw for offspring ``k`` of generation ``g`` comes from a stream
seeded by ``(rng_seed, g, k)``, so offspring may be built in any order (or in
parallel) without changing the result.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .erich import app_order_key, sort_applications
from .model import Application, InstanceType, Portfolio, ProblemInstance, UnsolvableError, market_allows
from .packing import Host, Packing, runs

_INIT, _SELECT, _OFFSPRING = 1, 2, 3


@dataclass(frozen=True)
class GaConfig:
    """GA hyperparameters.

    Only ``greedy_init_fraction = 0.5`` comes from the method description;
    the other defaults are tuning choices.
    """

    population_size: int = 20
    generations: int = 10
    crossover_pairs: int | None = None  # defaults to population_size // 2
    mutation_probability: float = 0.2
    rng_seed: int = 0
    greedy_init_fraction: float = 0.5
    convergence_epsilon: float = 1e-3

    def __post_init__(self) -> None:
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        for name in ("mutation_probability", "greedy_init_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.crossover_pairs is not None and self.crossover_pairs < 0:
            raise ValueError("crossover_pairs must be >= 0")

    @property
    def pairs(self) -> int:
        if self.crossover_pairs is not None:
            return self.crossover_pairs
        return max(1, self.population_size // 2)


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    min_cost: float
    mean_cost: float
    max_cost: float


def stream(seed: int, *keys: int) -> random.Random:
    """Independent RNG derived from a seed and a key path."""
    ss = np.random.SeedSequence([seed % 2**64, *keys])
    return random.Random(int.from_bytes(ss.generate_state(4).tobytes(), "little"))


class _Context:
    """Per-problem lookups shared by the operators."""

    def __init__(self, problem: ProblemInstance) -> None:
        self.problem = problem
        self.apps = problem.app_index
        probe = Packing(problem)
        self.fitting: dict[str, list[InstanceType]] = {}
        for app in problem.applications:
            types = [t for t in problem.catalog if probe.fits_alone(app, t)]
            if not types:
                raise UnsolvableError(app.id)
            self.fitting[app.id] = types


_CONTEXTS: dict[int, tuple[ProblemInstance, _Context]] = {}


def _context(problem: ProblemInstance) -> _Context:
    hit = _CONTEXTS.get(id(problem))
    if hit is not None and hit[0] is problem:
        return hit[1]
    if len(_CONTEXTS) > 16:
        _CONTEXTS.clear()
    ctx = _Context(problem)
    _CONTEXTS[id(problem)] = (problem, ctx)
    return ctx


class Chromosome:
    """A candidate portfolio; ``fitness`` is its total cost (lower is better)."""

    def __init__(self, pack: Packing) -> None:
        self.pack = pack
        self.fitness = pack.cost()

    @cached_property
    def genes(self) -> list[dict[int, list[str]]]:
        """Slot-indexed ``host id -> app ids``."""
        genes: list[dict[int, list[str]]] = [{} for _ in range(self.pack.problem.horizon)]
        for host in self.pack.hosts.values():
            for app_id, slots in host.members.items():
                for t in slots:
                    genes[t].setdefault(host.id, []).append(app_id)
        return genes

    @property
    def instance_table(self) -> dict[int, Host]:
        return self.pack.hosts

    def decode(self) -> Portfolio:
        return self.pack.to_portfolio()

    def __repr__(self) -> str:
        return f"Chromosome(hosts={len(self.pack.hosts)}, fitness={self.fitness:.3f})"


def _open_random(pack: Packing, app: Application, t0: int, t1: int, ctx: _Context, rng: random.Random) -> Host:
    itype = rng.choice(ctx.fitting[app.id])
    host = pack.open(itype, t0, t1)
    pack.assign(app, host, t0, t1)
    return host


def _repair(pack: Packing, orphans: Iterable[tuple[Application, int, int]], ctx: _Context,
            rng: random.Random) -> Packing:
    for app, t0, t1 in sorted(orphans, key=lambda o: (o[1], app_order_key(o[0]))):
        host = pack.first_fit(app, t0, t1)
        if host is not None:
            pack.assign(app, host, t0, t1)
        else:
            _open_random(pack, app, t0, t1, ctx, rng)
    return pack


def orphan_gaps(pack: Packing) -> list[tuple[Application, int, int]]:
    """Unassigned slot ranges; a broken non-preemptible app is stripped whole."""
    out = []
    for app in pack.problem.applications:
        gaps = pack.gaps(app)
        if not app.preemptible:
            if gaps or len(pack.hosts_of(app)) > 1:
                pack.unassign_app(app)
                out.append((app, app.start, app.end))
        else:
            out.extend((app, t0, t1) for t0, t1 in gaps)
    return out


def repair(chromosome: Chromosome, orphans: Iterable[tuple[Application, int, int]],
           problem: ProblemInstance, rng: random.Random) -> Chromosome:
    """First-fit each orphan gap into existing hosts, else a random fitting type."""
    orphans = list(orphans)
    if not orphans:
        return chromosome
    pack = chromosome.pack.copy()
    for app, t0, t1 in orphans:
        for hid in pack.hosts_of(app):
            pack.unassign(app, pack.hosts[hid], range(t0, t1))
    _repair(pack, orphans, _context(problem), rng)
    pack.compact()
    return Chromosome(pack)


def init_population(problem: ProblemInstance, config: GaConfig) -> list[Chromosome]:
    ctx = _context(problem)
    order = sort_applications(problem.applications)
    population = []
    for k in range(config.population_size):
        rng = stream(config.rng_seed, _INIT, k)
        pack = Packing(problem)
        for app in order:
            if rng.random() < config.greedy_init_fraction:
                host = pack.first_fit(app, app.start, app.end)
                if host is None:
                    _open_random(pack, app, app.start, app.end, ctx, rng)
                else:
                    pack.assign(app, host, app.start, app.end)
            else:
                # random half: a fresh host of a uniformly drawn fitting type
                _open_random(pack, app, app.start, app.end, ctx, rng)
        pack.compact()
        population.append(Chromosome(pack))
    return population


def _roulette(weights: Sequence[float], rng: random.Random) -> int:
    return rng.choices(range(len(weights)), weights=weights)[0]


def select_parents(population: Sequence[Chromosome], pairs: int,
                   rng: random.Random) -> list[tuple[Chromosome, Chromosome]]:
    """Fitness-proportionate selection with weights ``max_cost - cost + eps``."""
    if not population:
        raise ValueError("empty population")
    costs = [c.fitness for c in population]
    top = max(costs)
    eps = 1e-6 * top if top > 0 else 1e-6
    weights = [top - c + eps for c in costs]
    out = []
    for _ in range(pairs):
        i = _roulette(weights, rng)
        if len(population) >= 2:
            rest = list(weights)
            rest[i] = 0.0
            j = _roulette(rest, rng)
        else:
            j = i
        out.append((population[i], population[j]))
    return out


def _rank_key(host: Host) -> tuple:
    """Utilisation descending, then price per slot ascending, then id."""
    util = float(host.mean.sum()) / (host.itype.capacity * (host.end - host.start))
    return (-util, host.itype.price_per_slot, host.id)


def crossover(parent_a: Chromosome, parent_b: Chromosome, problem: ProblemInstance,
              rng: random.Random) -> Chromosome:
    """Merge both parents' ranked hosts slot by slot, best-utilised first.

    A host is adopted at a slot together with its applications there. A host
    whose applications clash with ones already placed at that slot (or with a
    non-preemptible application held by another adopted host) is eliminated
    and ignored for all later slots. Whatever is left uncovered is repaired.
    """
    ctx = _context(problem)
    apps = ctx.apps
    parents = (parent_a, parent_b)
    keys = [{hid: _rank_key(h) for hid, h in p.pack.hosts.items()} for p in parents]
    genes = [p.genes for p in parents]

    adopted: dict[tuple[int, int], dict[str, list[int]]] = {}
    bound: dict[str, tuple[int, int]] = {}
    banned: set[tuple[int, int]] = set()
    for t in range(problem.horizon):
        ga, gb = genes[0][t], genes[1][t]
        if not ga and not gb:
            continue
        # merge both ranked host lists into one ranking; ties favour parent_a
        merged = sorted([(0, h) for h in ga] + [(1, h) for h in gb],
                        key=lambda k: (keys[k[0]][k[1]], k[0]))
        placed: set[str] = set()
        for key in merged:
            if key in banned:
                continue
            members = genes[key[0]][t][key[1]]
            if any(_clashes(apps[a], key, t, placed, bound) for a in members):
                banned.add(key)
                continue
            slot_map = adopted.setdefault(key, {})
            for app_id in members:
                if not apps[app_id].preemptible:
                    bound.setdefault(app_id, key)
                placed.add(app_id)
                slot_map.setdefault(app_id, []).append(t)

    child = Packing(problem)
    for (pi, hid), members in adopted.items():
        source = parents[pi].pack.hosts[hid]
        lo = min(ts[0] for ts in members.values())
        hi = max(ts[-1] for ts in members.values()) + 1
        host = child.open(source.itype, lo, hi)
        for app_id, slots in members.items():
            app = apps[app_id]
            for t0, t1 in runs(slots):
                # subsets of a feasible slot stay feasible only for q_min >= 0.5
                if child.fits(app, host, t0, t1):
                    child.assign(app, host, t0, t1)
    _repair(child, orphan_gaps(child), ctx, rng)
    child.compact()
    return Chromosome(child)


def _clashes(app: Application, key: tuple[int, int], t: int, placed: set[str],
             bound: dict[str, tuple[int, int]]) -> bool:
    if app.id in placed:
        return True
    if app.preemptible:
        return False
    owner = bound.get(app.id)
    return owner != key if owner is not None else t != app.start


def dominates(candidate: Application, span: tuple[int, int],
              partition: Sequence[tuple[Application, Iterable[int]]]) -> bool:
    """Temporal dominance of ``candidate`` (hosted over ``span``) over a partition.

    The span must contain every slot the partition members hold on the host,
    and ``P(X_candidate > sum X_partition) > 0.5``, which for independent
    normals is a strict comparison of means.
    """
    if not 1 <= len(partition) <= 2:
        raise ValueError("partitions hold one or two applications")
    lo, hi = span
    for _app, slots in partition:
        if any(not lo <= t < hi for t in slots):
            return False
    return candidate.demand_mean > sum(app.demand_mean for app, _slots in partition)


def mutate(chromosome: Chromosome, problem: ProblemInstance, rng: random.Random) -> Chromosome:
    """Swap a random application into a random host if it dominates a partition there."""
    ctx = _context(problem)
    apps = ctx.apps
    pack = chromosome.pack
    if not problem.applications:
        return chromosome
    d = apps[rng.choice(sorted(apps))]

    candidates = []
    for host in pack.hosts.values():
        if not market_allows(d, host.itype):
            continue
        if d.preemptible:
            lo, hi = max(d.start, host.start), min(d.end, host.end)
            if lo >= hi:
                continue
        elif host.covers(d.start, d.end):
            lo, hi = d.start, d.end
        else:
            continue
        held = host.members.get(d.id, ())
        if sum(1 for t in held if lo <= t < hi) == hi - lo:
            continue
        if not any(a != d.id for a in host.members):
            continue
        candidates.append((host.id, lo, hi))
    if not candidates:
        return chromosome
    hid, lo, hi = rng.choice(candidates)
    host = pack.hosts[hid]
    eligible = [a for a in sorted(host.members)
                if a != d.id and all(lo <= t < hi for t in host.members[a])]
    for part in itertools.chain(itertools.combinations(eligible, 1), itertools.combinations(eligible, 2)):
        if not dominates(d, (lo, hi), [(apps[a], host.members[a]) for a in part]):
            continue
        trial = pack.copy()
        th = trial.hosts[hid]
        for a in part:
            trial.unassign(apps[a], th, set(th.members[a]))
        if d.preemptible:
            for other in trial.hosts_of(d):
                trial.unassign(d, trial.hosts[other], range(lo, hi))
        else:
            trial.unassign_app(d)
        if not trial.fits(d, th, lo, hi):
            continue
        trial.assign(d, th, lo, hi)
        _repair(trial, orphan_gaps(trial), ctx, rng)
        trial.compact()
        return Chromosome(trial)
    return chromosome


def merge_generation(population: Sequence[Chromosome], offspring: Sequence[Chromosome],
                     size: int | None = None) -> list[Chromosome]:
    """Keep the ``size`` cheapest of parents plus offspring; ties keep insertion order."""
    if size is None:
        size = len(population)
    return sorted([*population, *offspring], key=lambda c: c.fitness)[:size]


def _stats(generation: int, population: Sequence[Chromosome]) -> GenerationStats:
    costs = [c.fitness for c in population]
    return GenerationStats(generation, min(costs), sum(costs) / len(costs), max(costs))


def _converged(population: Sequence[Chromosome], eps: float) -> bool:
    costs = [c.fitness for c in population]
    mean = sum(costs) / len(costs)
    if mean == 0:
        return True
    return (max(costs) - min(costs)) / mean < eps


def evolve(problem: ProblemInstance, config: GaConfig) -> tuple[list[Chromosome], list[GenerationStats]]:
    """Run the GA; returns the final population and per-generation stats."""
    population = init_population(problem, config)
    stats = [_stats(0, population)]
    for g in range(1, config.generations + 1):
        if _converged(population, config.convergence_epsilon):
            break
        pairs = select_parents(population, config.pairs, stream(config.rng_seed, _SELECT, g))
        offspring = []
        for k, (pa, pb) in enumerate(pairs):
            rng = stream(config.rng_seed, _OFFSPRING, g, k)
            child = crossover(pa, pb, problem, rng)
            if rng.random() < config.mutation_probability:
                child = mutate(child, problem, rng)
            offspring.append(child)
        population = merge_generation(population, offspring, config.population_size)
        stats.append(_stats(g, population))
    return population, stats


def solve_georg(problem: ProblemInstance, config: GaConfig | None = None) -> tuple[Portfolio, list[GenerationStats]]:
    config = config or GaConfig()
    population, stats = evolve(problem, config)
    best = min(population, key=lambda c: c.fitness)
    return best.decode(), stats
