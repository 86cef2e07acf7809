"""Command-line entry point: ``demandgame <command> ...``.

Exit codes: 0 success, 1 other errors, 2 validation failure, 3 divergence
or round cap, 4 parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..allocation import allocation_nash_equilibrium, revenues_given_allocation
from ..asymptotics import SymmetricMarket, sweep_periods, sweep_population
from ..distributed import privacy_audit, run_algorithm1
from ..equilibrium import stackelberg_equilibrium
from ..errors import (
    CapExceeded,
    DemandGameError,
    Diverged,
    InvalidScenario,
    ParseError,
    StageError,
    UnitError,
)
from ..model import load_scenario, regime_warnings, validate_scenario
from .casestudy import DATA_DIR, outcome_to_dict, run_case_study

EXIT_OK, EXIT_ERROR, EXIT_INVALID, EXIT_DIVERGED, EXIT_PARSE = 0, 1, 2, 3, 4


def _emit(doc: dict, out: str | None, name: str) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / name).write_text(text)


def _cmd_validate(args) -> int:
    s = load_scenario(args.scenario)
    errors = validate_scenario(s)
    for v in errors + regime_warnings(s):
        print(v)
    if errors:
        return EXIT_INVALID
    print("ok")
    return EXIT_OK


def _cmd_solve(args) -> int:
    s = load_scenario(args.scenario)
    outcome = stackelberg_equilibrium(s)
    _emit(outcome_to_dict(s, outcome), args.out, "equilibrium.json")
    return EXIT_OK


def _cmd_allocate(args) -> int:
    s = load_scenario(args.scenario)
    errors = validate_scenario(s)
    if errors:
        raise InvalidScenario(errors)
    profile = allocation_nash_equilibrium(s)
    doc = {
        "companies": [c.id for c in s.companies],
        "allocations": profile.allocations.tolist(),
        "revenues": revenues_given_allocation(profile, s).tolist(),
    }
    _emit(doc, args.out, "allocation.json")
    return EXIT_OK


def _cmd_iterate(args) -> int:
    s = load_scenario(args.scenario)
    init = "random" if args.seed is not None else None
    trace = run_algorithm1(
        s, delta=args.delta, tol=args.tol, max_rounds=args.max_rounds, order=args.order,
        initial_prices=init, seed=args.seed, strict=False, allow_negative_delta=True,
    )
    summary = trace.summary()
    if trace.converged:
        summary["privacy_audit"] = bool(privacy_audit(trace, s))
    if args.out is not None:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        trace.write_jsonl(d / "trace.jsonl")
    _emit(summary, args.out, "trace_summary.json")
    if trace.outcome == "diverged":
        print(f"diverged in round {trace.final_round}", file=sys.stderr)
        return EXIT_DIVERGED
    if trace.outcome == "cap":
        print(f"no convergence within {args.max_rounds} rounds", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _parse_values(text: str) -> list[int]:
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",") if v.strip()]


def _cmd_sweep(args) -> int:
    values = _parse_values(args.values)
    if args.axis == "periods":
        budgets = [float(b) for b in args.budgets.split(",")]
        result = sweep_periods(SymmetricMarket(args.companies, args.capacity, budgets), values,
                               crosscheck=not args.no_crosscheck)
    else:
        result = sweep_population(float(args.budgets.split(",")[0]), args.companies, args.periods,
                                  args.capacity, values, crosscheck=not args.no_crosscheck)
    if args.out is None:
        w = sys.stdout
        w.write("axis_value,price,demand_per_cell,user_utility,company_revenue\n")
        for p in result.points:
            w.write(f"{p.axis_value},{p.price!r},{p.demand_per_cell!r},{p.user_utility!r},{p.company_revenue!r}\n")
        return EXIT_OK
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    result.write_csv(d / "sweep.csv")
    result.write_limits(d / "limits.json")
    return EXIT_OK


def _cmd_casestudy(args) -> int:
    path = Path(args.config)
    if not path.exists() and (DATA_DIR / f"{args.config}.json").exists():
        path = DATA_DIR / f"{args.config}.json"
    result = run_case_study(path, args.out)
    doc = {
        "name": result.name,
        "flags": result.outcome.flags.labels(),
        "minimum_budget": result.minimum_budget,
        "savings_fraction": result.savings.savings_fraction,
        "files": list(result.files),
    }
    if result.trace is not None:
        doc["distributed"] = result.trace.summary()["outcome"]
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="demandgame", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_out(p):
        p.add_argument("--out", metavar="DIR", help="write files here instead of stdout")
        return p

    p = sub.add_parser("validate", help="list scenario violations")
    p.add_argument("scenario")
    p.set_defaults(func=_cmd_validate)

    p = with_out(sub.add_parser("solve", help="Stackelberg equilibrium of a scenario"))
    p.add_argument("scenario")
    p.set_defaults(func=_cmd_solve)

    p = with_out(sub.add_parser("allocate", help="power-allocation equilibrium"))
    p.add_argument("scenario")
    p.set_defaults(func=_cmd_allocate)

    p = with_out(sub.add_parser("iterate", help="distributed price iteration"))
    p.add_argument("scenario")
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-rounds", type=int, default=10_000)
    p.add_argument("--order", choices=["sequential", "synchronous"], default="sequential")
    p.add_argument("--seed", type=int, default=None,
                   help="start from seeded random prices instead of 1.0")
    p.set_defaults(func=_cmd_iterate)

    p = with_out(sub.add_parser("sweep", help="symmetric-market sweep over T or N"))
    p.add_argument("--axis", choices=["periods", "population"], default="periods")
    p.add_argument("--values", required=True, help="'1:512' or '1,2,4'")
    p.add_argument("--companies", type=int, default=1)
    p.add_argument("--capacity", type=float, required=True,
                   help="horizon total per company (periods axis) or per-period allocation (population axis)")
    p.add_argument("--budgets", default="1", help="comma-separated budgets; the first one is reported")
    p.add_argument("--periods", type=int, default=1, help="horizon for the population axis")
    p.add_argument("--no-crosscheck", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = with_out(sub.add_parser("casestudy", help="run a case-study config"))
    p.add_argument("config", help="config path or bundled name (ecogrid, ecogrid_market, dutch)")
    p.set_defaults(func=_cmd_casestudy)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, (ParseError, UnitError)):
            return EXIT_PARSE
        if isinstance(exc.cause, InvalidScenario):
            return EXIT_INVALID
        return EXIT_ERROR
    except (ParseError, UnitError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InvalidScenario as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (Diverged, CapExceeded) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DemandGameError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
