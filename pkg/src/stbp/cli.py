"""Command-line harness: ``generate``, ``solve``, ``compare``, ``validate``, ``oracle``.

Exit codes: 0 success, 1 the produced or checked portfolio has violations,
2 usage, parse or load errors. ``STBP_SEED`` supplies the seed when
``--seed`` is absent.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import io as sio
from .datagen import CASES, DEFAULT_Q_MIN, GenerationError, build_case, build_named_case
from .erich import solve_erich
from .georg import GaConfig, evolve
from .model import ProblemError, ProblemInstance, validate
from .oracle import OracleLimitError, brute_force_optimum

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("STBP_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"STBP_SEED must be an integer, got {env!r}") from None


def _with_q_min(problem: ProblemInstance, q_min: float | None) -> ProblemInstance:
    if q_min is None or q_min == problem.q_min:
        return problem
    return replace(problem, q_min=q_min)


def _ga_config(args, seed: int) -> GaConfig:
    kwargs = {"rng_seed": seed}
    for name in ("population_size", "generations", "crossover_pairs", "mutation_probability"):
        value = getattr(args, name, None)
        if value is not None:
            kwargs[name] = value
    try:
        return GaConfig(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        sio.write_atomic(out, text)


def _ms(t0: float, enabled: bool) -> float | None:
    return (time.perf_counter() - t0) * 1000.0 if enabled else None


# -- subcommands ----------------------------------------------------------------


def cmd_generate(args) -> int:
    seed = _seed(args)
    q_min = DEFAULT_Q_MIN if args.q_min is None else args.q_min
    try:
        if args.profile in CASES:
            problem = build_named_case(args.profile, seed, q_min, args.time_scale)
        elif Path(args.profile).suffix == ".json" or Path(args.profile).exists():
            app_profile, type_profile = sio.read_profile(args.profile)
            problem = build_case(app_profile.scaled(args.time_scale), type_profile, seed, q_min)
        else:
            raise UsageError(f"unknown profile {args.profile!r}; expected one of {', '.join(CASES)} or a JSON file")
    except (GenerationError, ProblemError) as exc:
        raise UsageError(str(exc)) from None
    _emit(sio.dumps(sio.scenario_to_dict(problem)), args.out)
    return EXIT_OK


def cmd_solve(args) -> int:
    seed = _seed(args)
    problem = _with_q_min(sio.read_scenario(args.scenario), args.q_min)
    case_id = Path(args.scenario).stem
    timing = not args.no_timing
    t0 = time.perf_counter()
    stats = None
    if args.algorithm == "erich":
        portfolio = solve_erich(problem)
    else:
        population, stats = evolve(problem, _ga_config(args, seed))
        portfolio = min(population, key=lambda c: c.fitness).decode()
    wall = _ms(t0, timing)

    # everything is computed before any file is touched
    outputs = [(args.out, sio.dumps(sio.solution_to_dict(portfolio, problem, args.algorithm)))]
    if stats is not None:
        gen_path = args.generations_report
        if gen_path is None and args.out not in (None, "-"):
            gen_path = str(Path(args.out).with_suffix("")) + "_generations.csv"
        if gen_path is not None:
            outputs.append((gen_path, sio.generations_text(stats)))
    for path, text in outputs:
        _emit(text, path)
    if args.report is not None:
        row = sio.ReportRow.for_portfolio(args.algorithm, case_id, seed, portfolio, problem, wall)
        sio.append_report(args.report, [row])

    violations = validate(portfolio, problem)
    for v in violations:
        print(v, file=sys.stderr)
    return EXIT_OK if not violations else EXIT_INVALID


def cmd_compare(args) -> int:
    problem = _with_q_min(sio.read_scenario(args.scenario), args.q_min)
    case_id = Path(args.scenario).stem
    seeds = [_seed(args)] if args.seeds is None else args.seeds
    timing = not args.no_timing
    rows: list[sio.ReportRow] = []
    invalid = False

    t0 = time.perf_counter()
    erich = solve_erich(problem)
    rows.append(sio.ReportRow.for_portfolio("erich", case_id, None, erich, problem, _ms(t0, timing)))
    invalid |= bool(validate(erich, problem))
    georg_rows, baseline_rows = [], []
    for seed in seeds:
        t0 = time.perf_counter()
        population, stats = evolve(problem, _ga_config(args, seed))
        best = min(population, key=lambda c: c.fitness).decode()
        georg_rows.append(sio.ReportRow.for_portfolio("georg", case_id, seed, best, problem, _ms(t0, timing)))
        baseline_rows.append(sio.ReportRow("baseline", case_id, seed, stats[0].mean_cost))
        invalid |= bool(validate(best, problem))
    rows += georg_rows + baseline_rows
    _emit(sio.report_text(rows), args.out)
    return EXIT_INVALID if invalid else EXIT_OK


def cmd_validate(args) -> int:
    problem = _with_q_min(sio.read_scenario(args.scenario), args.q_min)
    portfolio = sio.read_solution(args.solution, problem)
    violations = validate(portfolio, problem)
    for v in violations:
        print(v)
    if not violations:
        print("valid")
    return EXIT_OK if not violations else EXIT_INVALID


def cmd_oracle(args) -> int:
    problem = _with_q_min(sio.read_scenario(args.scenario), args.q_min)
    try:
        portfolio, cost = brute_force_optimum(problem)
    except OracleLimitError as exc:
        raise UsageError(str(exc)) from None
    if args.out is not None:
        _emit(sio.dumps(sio.solution_to_dict(portfolio, problem, "oracle")), args.out)
    print(sio.format_cost(cost))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def _probability(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def _positive(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stbp", description="Stochastic temporal bin packing for cloud portfolios.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("scenario", help="scenario JSON file")
        p.add_argument("--seed", type=int, help="random seed (default: $STBP_SEED or 0)")
        p.add_argument("--q-min", type=_probability, help="override the quality-of-service level")

    def ga(p):
        p.add_argument("--generations", type=int)
        p.add_argument("--population", dest="population_size", type=int)
        p.add_argument("--pairs", dest="crossover_pairs", type=int, help="crossover pairs per generation")
        p.add_argument("--mutation", dest="mutation_probability", type=_probability)
        p.add_argument("--no-timing", action="store_true", help="leave wall_time_ms blank for reproducible reports")

    p = sub.add_parser("generate", help="write a synthetic scenario")
    common(p, scenario=False)
    p.add_argument("--profile", required=True, help=f"{', '.join(CASES)} or a profile JSON file")
    p.add_argument("--time-scale", type=_positive, default=1.0, help="divide lifespans and horizon by this factor")
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="solve a scenario")
    common(p)
    p.add_argument("--algorithm", choices=("erich", "georg"), default="erich")
    ga(p)
    p.add_argument("--out", help="solution JSON path (default: stdout)")
    p.add_argument("--report", help="append a metrics row to this CSV")
    p.add_argument("--generations-report", help="per-generation CSV for georg (default: next to --out)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("compare", help="ERICH once, GEORG per seed, plus the generation-0 baseline")
    common(p)
    p.add_argument("--seeds", type=int, nargs="*", help="GEORG seeds; an empty list runs ERICH only")
    ga(p)
    p.add_argument("--out", help="comparison CSV path (default: stdout)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate", help="check a solution against a scenario")
    common(p)
    p.add_argument("solution", help="solution JSON file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("oracle", help="exact optimum of a tiny scenario")
    common(p)
    p.add_argument("--out", help="write the optimal solution JSON here")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, sio.FileFormatError, ProblemError, OSError) as exc:
        print(f"stbp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
