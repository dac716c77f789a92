"""Synthetic scenarios shaped like the published application and type sets.

Magnitudes are drawn from normals truncated to the valid range, with the
underlying normal parameters fitted so that the *truncated* distribution hits
the target mean and standard deviation. When the target coefficient of
variation is beyond what a truncated normal can reach (CV close to or above
1), a moment-matched lognormal is used instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import optimize, special, stats

from .model import Application, InstanceType, Market, ProblemInstance, ProblemError
from .normal import norm_ppf

DEFAULT_Q_MIN = 0.95
MOMENT_RTOL = 0.15
RETRY_CAP = 5000
PRICE_CAPACITY_CORRELATION = 0.8


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AppSetProfile:
    n_non_preemptible: int
    n_preemptible: int
    mean_demand: float
    std_demand: float
    mean_sigma: float
    std_sigma: float
    mean_periods: float
    std_periods: float
    horizon: int

    def __post_init__(self) -> None:
        if self.n_non_preemptible < 0 or self.n_preemptible < 0:
            raise ValueError("counts must be >= 0")
        if min(self.std_demand, self.std_sigma, self.std_periods) < 0:
            raise ValueError("spreads must be >= 0")
        if self.mean_periods > self.horizon:
            raise ValueError("mean_periods exceeds horizon")

    @property
    def size(self) -> int:
        return self.n_non_preemptible + self.n_preemptible

    def scaled(self, time_scale: float) -> AppSetProfile:
        """Shrink lifespans and horizon by ``time_scale``."""
        if time_scale == 1:
            return self
        return replace(
            self,
            mean_periods=self.mean_periods / time_scale,
            std_periods=self.std_periods / time_scale,
            horizon=max(1, int(math.ceil(self.horizon / time_scale))),
        )


@dataclass(frozen=True)
class TypeSetProfile:
    n_types: int
    mean_capacity: float
    std_capacity: float
    reserved_price: tuple[float, float]
    on_demand_price: tuple[float, float]
    spot_price: tuple[float, float]
    reserved_min_term_range: tuple[int, int] | None = None  # None: derived from the horizon

    def __post_init__(self) -> None:
        if self.n_types < 1:
            raise ValueError("n_types must be >= 1")
        if self.mean_capacity <= 0 or self.std_capacity < 0:
            raise ValueError("invalid capacity moments")

    def price(self, market: Market) -> tuple[float, float]:
        return {
            Market.RESERVED: self.reserved_price,
            Market.ON_DEMAND: self.on_demand_price,
            Market.SPOT: self.spot_price,
        }[market]


def _horizon(mean: float, std: float) -> int:
    return int(math.ceil(mean + 3 * std))


APP_SETS: dict[str, AppSetProfile] = {
    name: AppSetProfile(n_np, n_p, mu, mu_sd, sig, sig_sd, per, per_sd, _horizon(per, per_sd))
    for name, (n_np, n_p, mu, mu_sd, sig, sig_sd, per, per_sd) in {
        "apps_1": (14, 6, 3.27, 1.71, 0.53, 0.48, 43.15, 33.4),
        "apps_2": (59, 41, 3.0, 2.62, 0.53, 0.74, 63.93, 43.94),
        "apps_3": (10, 10, 3.02, 2.01, 0.71, 0.63, 212.2, 167.88),
        "apps_4": (42, 58, 3.1, 2.57, 0.5, 0.59, 237.16, 171.57),
        "apps_5": (7, 13, 3.12, 2.69, 0.6, 0.56, 2758.55, 1996.98),
        "apps_6": (41, 59, 2.78, 1.97, 0.49, 0.57, 2871.74, 2055.67),
    }.items()
}

TYPE_SETS: dict[str, TypeSetProfile] = {
    "types_1": TypeSetProfile(500, 9.60, 8.77, (2.27, 2.85), (3.10, 2.16), (2.53, 2.21)),
    "types_2": TypeSetProfile(500, 10.32, 11.40, (2.16, 2.38), (3.13, 2.57), (3.15, 4.84)),
    "types_3": TypeSetProfile(500, 9.79, 9.91, (2.41, 3.80), (3.10, 2.41), (2.33, 1.74)),
}

CASES: dict[str, tuple[str, str]] = {
    "case_1": ("apps_1", "types_1"),
    "case_2": ("apps_2", "types_1"),
    "case_3": ("apps_3", "types_2"),
    "case_4": ("apps_4", "types_2"),
    "case_5": ("apps_5", "types_3"),
    "case_6": ("apps_6", "types_3"),
}


# -- samplers ----------------------------------------------------------------

@dataclass(frozen=True)
class _Sampler:
    kind: str  # "const", "truncnorm" or "lognormal"
    a: float
    b: float
    lower: float
    upper: float

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "const":
            return np.full(n, self.a)
        if self.kind == "truncnorm":
            lo, hi = (self.lower - self.a) / self.b, (self.upper - self.a) / self.b
            x = stats.truncnorm.rvs(lo, hi, loc=self.a, scale=self.b, size=n, random_state=rng)
        else:
            x = rng.lognormal(self.a, self.b, size=n)
        return np.clip(x, self.lower, self.upper)


def _truncnorm_moments(loc: float, scale: float, lower: float, upper: float) -> tuple[float, float]:
    a, b = (lower - loc) / scale, (upper - loc) / scale
    m, v = stats.truncnorm.stats(a, b, loc=loc, scale=scale, moments="mv")
    return float(m), float(math.sqrt(max(float(v), 0.0)))


@lru_cache(maxsize=None)
def fit_sampler(mean: float, std: float, lower: float, upper: float = math.inf) -> _Sampler:
    """Sampler on ``[lower, upper]`` whose mean and std match the targets."""
    if std == 0:
        return _Sampler("const", min(max(mean, lower), upper), 0.0, lower, upper)

    def resid(p):
        m, s = _truncnorm_moments(p[0], math.exp(p[1]), lower, upper)
        return [(m - mean) / mean, (s - std) / std]

    best = None
    for start in ([mean, math.log(std)], [lower, math.log(std * 2)], [lower - 2 * std, math.log(std * 3)]):
        sol = optimize.least_squares(resid, start, xtol=1e-12, ftol=1e-12)
        if best is None or sol.cost < best.cost:
            best = sol
    if best is not None and max(abs(r) for r in best.fun) < 0.01:
        return _Sampler("truncnorm", float(best.x[0]), math.exp(float(best.x[1])), lower, upper)
    sigma2 = math.log1p((std / mean) ** 2)
    return _Sampler("lognormal", math.log(mean) - sigma2 / 2, math.sqrt(sigma2), lower, upper)


def _close(value: float, target: float) -> bool:
    if target == 0:
        return abs(value) <= 1e-12
    return abs(value - target) <= MOMENT_RTOL * abs(target)


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed % 2**64, tag]))


# -- generators ---------------------------------------------------------------

def _app_samplers(profile: AppSetProfile) -> tuple[_Sampler, _Sampler, _Sampler]:
    return (
        fit_sampler(profile.mean_demand, profile.std_demand, 0.1),
        fit_sampler(profile.mean_sigma, profile.std_sigma, 0.0),
        fit_sampler(profile.mean_periods, profile.std_periods, 1.0, float(profile.horizon)),
    )


def generate_apps(profile: AppSetProfile, seed: int) -> list[Application]:
    """Applications whose sample moments track the profile (checked for >= 20 apps)."""
    n = profile.size
    if n == 0:
        return []
    rng = _rng(seed, 1)
    mu_s, sig_s, len_s = _app_samplers(profile)
    for _ in range(RETRY_CAP):
        mu = mu_s.draw(rng, n)
        sig = sig_s.draw(rng, n)
        length = np.clip(np.rint(len_s.draw(rng, n)), 1, profile.horizon).astype(int)
        if n < 20 or all(
            _close(float(x.mean()), m) and _close(float(x.std(ddof=1)), s)
            for x, m, s in (
                (mu, profile.mean_demand, profile.std_demand),
                (sig, profile.mean_sigma, profile.std_sigma),
                (length, profile.mean_periods, profile.std_periods),
            )
        ):
            break
    else:
        raise GenerationError(f"sample moments off target after {RETRY_CAP} attempts")
    starts = [int(rng.integers(0, profile.horizon - int(L) + 1)) for L in length]
    flags = np.array([False] * profile.n_non_preemptible + [True] * profile.n_preemptible)
    rng.shuffle(flags)
    width = len(str(n - 1))
    return [
        Application(f"a{k:0{width}d}", s, s + int(L), bool(f), round(float(m), 6), round(float(g), 6))
        for k, (s, L, f, m, g) in enumerate(zip(starts, length, flags, mu, sig))
    ]


def min_term_range(horizon: int, base: tuple[int, int] = (10, 100)) -> tuple[int, int]:
    """``base`` scaled by the horizon's decade beyond the hundreds."""
    factor = 10 ** max(0, int(math.floor(math.log10(max(horizon, 1)))) - 2)
    return base[0] * factor, base[1] * factor


def generate_types(profile: TypeSetProfile, seed: int, horizon: int | None = None) -> list[InstanceType]:
    """Catalog split evenly across markets; prices rank-correlated with capacity."""
    rng = _rng(seed, 2)
    markets = list(Market)
    counts = [profile.n_types // 3 + (1 if k < profile.n_types % 3 else 0) for k in range(3)]
    lo_term, hi_term = profile.reserved_min_term_range or min_term_range(horizon or 100)
    cap_s = fit_sampler(profile.mean_capacity, profile.std_capacity, 0.5)
    price_s = {m: fit_sampler(*profile.price(m), 0.01) for m in markets}
    check = profile.n_types >= 60
    for _ in range(RETRY_CAP):
        caps = cap_s.draw(rng, profile.n_types)
        prices = {m: price_s[m].draw(rng, c) for m, c in zip(markets, counts)}
        if not check or (
            _close(float(caps.mean()), profile.mean_capacity)
            and all(_close(float(prices[m].mean()), profile.price(m)[0]) for m in markets)
        ):
            break
    else:
        raise GenerationError(f"catalog means off target after {RETRY_CAP} attempts")

    out: list[InstanceType] = []
    offset = 0
    rho = PRICE_CAPACITY_CORRELATION
    for market, count in zip(markets, counts):
        c = caps[offset:offset + count]
        offset += count
        ranks = stats.rankdata(c) / (count + 1)
        latent = rho * special.ndtri(ranks) + math.sqrt(1 - rho * rho) * rng.standard_normal(count)
        p = np.sort(prices[market])[np.argsort(np.argsort(latent, kind="stable"), kind="stable")]
        prefix = {Market.RESERVED: "R", Market.ON_DEMAND: "O", Market.SPOT: "S"}[market]
        for k in range(count):
            term = int(rng.integers(lo_term, hi_term + 1)) if market is Market.RESERVED else 1
            out.append(InstanceType(f"{prefix}{k:03d}", market, round(float(c[k]), 6),
                                    round(float(p[k]), 6), term))
    return out


def build_case(
    app_profile: AppSetProfile,
    type_profile: TypeSetProfile,
    seed: int,
    q_min: float = DEFAULT_Q_MIN,
) -> ProblemInstance:
    """Compose a problem; apps that no suitable type can hold alone are redrawn."""
    apps = generate_apps(app_profile, seed)
    types = generate_types(type_profile, seed, app_profile.horizon)
    z = norm_ppf(q_min)
    cap_any = max(t.capacity for t in types)
    cap_fixed = max((t.capacity for t in types if t.market is not Market.SPOT), default=0.0)
    rng = _rng(seed, 3)
    mu_s, sig_s, _ = _app_samplers(app_profile)

    def need(mu: float, sig: float) -> float:
        return mu if sig == 0 else mu + z * sig

    for k, app in enumerate(apps):
        cap = cap_any if app.preemptible else cap_fixed
        tries = 0
        while need(app.demand_mean, app.demand_std) > cap:
            tries += 1
            if tries > RETRY_CAP:
                raise GenerationError(f"cannot draw a hostable demand for {app.id}")
            app = replace(app, demand_mean=round(float(mu_s.draw(rng, 1)[0]), 6),
                          demand_std=round(float(sig_s.draw(rng, 1)[0]), 6))
        apps[k] = app
    horizon = max((a.end for a in apps), default=0)
    return ProblemInstance(tuple(apps), tuple(types), horizon, q_min)


def build_named_case(name: str, seed: int, q_min: float = DEFAULT_Q_MIN, time_scale: float = 1.0) -> ProblemInstance:
    if name not in CASES:
        raise KeyError(f"unknown profile {name!r}; expected one of {', '.join(CASES)}")
    apps_name, types_name = CASES[name]
    return build_case(APP_SETS[apps_name].scaled(time_scale), TYPE_SETS[types_name], seed, q_min)


def generate_tiny_case(seed: int, q_min: float = DEFAULT_Q_MIN, max_apps: int = 4,
                       max_types: int = 4, horizon: int = 8) -> ProblemInstance:
    """Small random problem within exhaustive-search reach."""
    rng = _rng(seed, 4)
    for _ in range(RETRY_CAP):
        n_apps = int(rng.integers(1, max_apps + 1))
        n_types = int(rng.integers(2, max_types + 1))
        apps = []
        for k in range(n_apps):
            length = int(rng.integers(1, min(5, horizon) + 1))
            start = int(rng.integers(0, horizon - length + 1))
            apps.append(Application(f"a{k}", start, start + length, bool(rng.random() < 0.5),
                                    round(float(rng.uniform(0.5, 4.0)), 3),
                                    round(float(rng.uniform(0.0, 1.0)), 3)))
        markets = [Market.RESERVED, Market.ON_DEMAND] + [
            Market(m) for m in rng.choice([m.value for m in Market], n_types - 2)
        ]
        unit = {Market.RESERVED: (0.15, 0.3), Market.ON_DEMAND: (0.3, 0.5), Market.SPOT: (0.1, 0.25)}
        types = []
        for k, market in enumerate(markets):
            cap = round(float(rng.uniform(3.0, 10.0)), 3)
            price = round(cap * float(rng.uniform(*unit[market])), 3)
            term = int(rng.integers(2, 6)) if market is Market.RESERVED else 1
            types.append(InstanceType(f"t{k}", market, cap, price, term))
        try:
            return ProblemInstance(tuple(apps), tuple(types), horizon, q_min)
        except ProblemError:
            continue
    raise GenerationError("could not draw a solvable tiny case")
