"""Case-study pipeline: experimental series in, equilibrium and savings out.

Parameters are derived from an experimental day the same way for every
data set: capacities follow the hourly load, each consumer's energy need is
an equal share of the day's load, and budgets are either given per class or
set to the minimum budget that buys that energy at the experimental prices.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..allocation import allocation_nash_equilibrium
from ..distributed import run_algorithm1
from ..equilibrium import EquilibriumOutcome, minimum_budget, stackelberg_equilibrium
from ..errors import CountMismatch, ParseError, ShareSumError, StageError, UnitError
from ..model import DEFAULT_PRICE_MAX, DEFAULT_PRICE_MIN, Company, Consumer, Scenario

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"

_PRICE_RE = re.compile(r"^price_([a-z]+)_per_(kwh|mwh)$")
_LOAD_RE = re.compile(r"^load_(kwh|mwh)$")


@dataclass(frozen=True)
class ExperimentSeries:
    periods: int
    prices: np.ndarray  # currency per kWh
    load: np.ndarray  # kWh per period, whole population
    currency: str
    population: int


def load_case_data(path: str | Path, population: int, currency: str | None = None) -> ExperimentSeries:
    """Read an hourly CSV with a period column, a price column and a load column.

    Column names carry the units: ``price_<currency>_per_kwh`` or
    ``..._per_mwh`` and ``load_kwh`` or ``load_mwh``. MWh-based columns are
    converted to kWh on the way in.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", 1)
    header = [h.strip().lower() for h in rows[0]]
    price_col = next((i for i, h in enumerate(header) if h.startswith("price")), None)
    load_col = next((i for i, h in enumerate(header) if h.startswith("load")), None)
    if price_col is None or load_col is None:
        raise ParseError("header needs a price column and a load column", 1)
    price_m = _PRICE_RE.match(header[price_col])
    load_m = _LOAD_RE.match(header[load_col])
    if price_m is None:
        raise UnitError(f"price column {header[price_col]!r} does not declare currency and energy unit")
    if load_m is None:
        raise UnitError(f"load column {header[load_col]!r} does not declare its unit")
    price_scale = 1e-3 if price_m.group(2) == "mwh" else 1.0
    load_scale = 1e3 if load_m.group(1) == "mwh" else 1.0

    prices, load = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            p = float(row[price_col]) * price_scale
            q = float(row[load_col]) * load_scale
        except (IndexError, ValueError) as exc:
            raise ParseError(f"unreadable row: {exc}", lineno) from exc
        if not (math.isfinite(p) and p > 0):
            raise ParseError(f"price must be positive, got {row[price_col]}", lineno)
        if not (math.isfinite(q) and q >= 0):
            raise ParseError(f"load must be non-negative, got {row[load_col]}", lineno)
        prices.append(p)
        load.append(q)
    if not prices:
        raise ParseError("no data rows", 2)
    if population < 1:
        raise ValueError("population must be at least 1")
    return ExperimentSeries(
        len(prices), np.array(prices), np.array(load),
        currency or price_m.group(1).upper(), int(population),
    )


def derive_scenario_from_experiment(
    series: ExperimentSeries,
    company_shares: Sequence[float] = (1.0,),
    budget_classes="minimum",
    *,
    company_ids: Sequence[str] | None = None,
    price_min: float = DEFAULT_PRICE_MIN,
    price_max: float = DEFAULT_PRICE_MAX,
) -> Scenario:
    """Build a game instance from an experimental day.

    Company ``k`` gets ``share_k * load(t)`` in every period. With
    ``budget_classes="minimum"`` every consumer's budget is the minimum
    budget at the experimental prices, repeated for each company; otherwise
    it is a list of ``(count, budget)`` pairs covering the population.
    """
    shares = [float(x) for x in company_shares]
    if not shares or any(x < 0 for x in shares) or abs(math.fsum(shares) - 1.0) > 1e-9:
        raise ShareSumError(f"company shares must be non-negative and sum to 1, got {shares}")
    ids = list(company_ids) if company_ids else [f"k{k + 1}" for k in range(len(shares))]
    T, N = series.periods, series.population
    companies = tuple(
        Company(
            ids[k], tuple(share * series.load), (price_min,) * T, (price_max,) * T,
            share * math.fsum(series.load),
        )
        for k, share in enumerate(shares)
    )
    e_min = math.fsum(series.load) / N

    if budget_classes == "minimum":
        board = np.repeat(series.prices[None, :], len(shares), axis=0)
        b = minimum_budget(Consumer("probe", 0.0, e_min), board)
        budgets = [b] * N
    else:
        classes = [(int(c), float(b)) for c, b in _class_pairs(budget_classes)]
        if sum(c for c, _ in classes) != N:
            raise CountMismatch(
                f"budget classes cover {sum(c for c, _ in classes)} consumers, population is {N}"
            )
        budgets = [b for c, b in classes for _ in range(c)]
    consumers = tuple(Consumer(f"n{i + 1}", b, e_min) for i, b in enumerate(budgets))
    return Scenario(consumers, companies, T)


def _class_pairs(classes):
    for c in classes:
        if isinstance(c, dict):
            yield c["count"], c["budget"]
        else:
            yield c


def horizon_scenario(s: Scenario, periods: int) -> Scenario:
    """Re-cut ``s`` to ``periods`` slots with every company at its uniform allocation."""
    companies = tuple(
        Company(c.id, (c.total_capacity,) * periods, (c.price_min[0],) * periods,
                (c.price_max[0],) * periods, c.total_capacity)
        for c in s.companies
    )
    stretched = Scenario(s.consumers, companies, periods)
    return stretched.with_capacities(allocation_nash_equilibrium(stretched).allocations)


@dataclass(frozen=True)
class SavingsReport:
    experimental_billing: float
    game_billing: float
    budget_total: float
    savings_fraction: float
    experimental_energy: float
    game_energy: float
    experimental_cumulative: np.ndarray
    game_cumulative: np.ndarray
    currency: str

    def to_dict(self) -> dict:
        return {
            "currency": self.currency,
            "experimental_billing": self.experimental_billing,
            "game_billing": self.game_billing,
            "budget_total": self.budget_total,
            "savings_fraction": self.savings_fraction,
            "experimental_energy": self.experimental_energy,
            "game_energy": self.game_energy,
        }


def billing_savings_report(
    series: ExperimentSeries, outcome: EquilibriumOutcome, budget_total: float | None = None
) -> SavingsReport:
    """Compare the experimental bill with what consumers pay at the equilibrium.

    The game bill is the equilibrium payment, which equals the sum of the
    budgets whenever the outcome is unflagged.
    """
    exp_per_period = series.prices * series.load
    sold = outcome.demands.sum(axis=0)  # (K, T)
    game_per_period = (outcome.prices * sold).sum(axis=0)
    exp_bill = math.fsum(exp_per_period)
    game_bill = math.fsum(game_per_period)
    return SavingsReport(
        exp_bill,
        game_bill,
        game_bill if budget_total is None else budget_total,
        1.0 - game_bill / exp_bill,
        math.fsum(series.load),
        math.fsum(sold.ravel()),
        np.cumsum(exp_per_period),
        np.cumsum(game_per_period),
        series.currency,
    )


# -- config-driven runs -----------------------------------------------------------


def _periods_list(value) -> list[int]:
    if isinstance(value, dict):
        return list(range(int(value["start"]), int(value["stop"]) + 1))
    return [int(v) for v in value]


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc
        return inner
    return wrap


def _json_dump(doc, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n")


def outcome_to_dict(s: Scenario, outcome: EquilibriumOutcome) -> dict:
    """Compact JSON view of an equilibrium (aggregate demand per company and period)."""
    sold = outcome.demands.sum(axis=0)
    totals = outcome.demands.sum(axis=(1, 2))
    payments = np.einsum("nkt,kt->n", outcome.demands, outcome.prices)
    return {
        "companies": [c.id for c in s.companies],
        "periods": s.periods,
        "prices": outcome.prices.tolist(),
        "sold": sold.tolist(),
        "revenues": outcome.revenues.tolist(),
        "flags": outcome.flags.labels(),
        "clamped_cells": sorted([list(c) for c in outcome.flags.clamped]),
        "negative_demand_consumers": list(outcome.flags.negative_demand),
        "infeasible_budget_consumers": list(outcome.flags.infeasible_budget),
        "consumers": [
            {"id": c.id, "budget": c.budget, "total_demand": float(totals[n]),
             "payment": float(payments[n]),
             "utility": None if math.isnan(outcome.consumer_utilities[n]) else float(outcome.consumer_utilities[n])}
            for n, c in enumerate(s.consumers)
        ],
        "revenue_residual": outcome.revenue_residual,
        "capacity_residual": outcome.capacity_residual,
    }


@dataclass
class CaseStudyResult:
    name: str
    series: ExperimentSeries
    scenario: Scenario
    outcome: EquilibriumOutcome
    savings: SavingsReport
    minimum_budget: float
    sweep: list[dict] | None = None
    trace: object = None
    files: tuple[str, ...] = ()


def run_case_study(config_path: str | Path, out_dir: str | Path | None = None) -> CaseStudyResult:
    """Run the pipeline described by a JSON config and optionally write the bundle.

    Stages: load, derive, (allocation), equilibrium, savings, then an
    optional horizon sweep and an optional distributed run. Any failure is
    re-raised as :class:`StageError` naming the stage.
    """
    config_path = Path(config_path)
    cfg = json.loads(config_path.read_text())
    data_path = Path(cfg["data"])
    if not data_path.is_absolute():
        data_path = config_path.parent / data_path

    series = _stage("load")(load_case_data)(data_path, int(cfg["population"]), cfg.get("currency"))
    companies_cfg = cfg.get("companies", {})
    bounds = cfg.get("price_bounds", {})
    scenario = _stage("derive")(derive_scenario_from_experiment)(
        series,
        companies_cfg.get("shares", [1.0]),
        cfg.get("budgets", "minimum"),
        company_ids=companies_cfg.get("ids"),
        price_min=float(bounds.get("min", DEFAULT_PRICE_MIN)),
        price_max=float(bounds.get("max", DEFAULT_PRICE_MAX)),
    )
    e_min = scenario.consumers[0].energy_min
    board = np.repeat(series.prices[None, :], scenario.K, axis=0)
    b_min = minimum_budget(Consumer("probe", 0.0, e_min), board)

    if cfg.get("allocation", False):
        scenario = _stage("allocation")(horizon_scenario)(scenario, scenario.T)
    outcome = _stage("equilibrium")(stackelberg_equilibrium)(scenario)
    savings = _stage("savings")(billing_savings_report)(series, outcome, scenario.aggregate_B)
    result = CaseStudyResult(cfg.get("name", config_path.stem), series, scenario, outcome, savings, b_min)

    if "sweep" in cfg:
        result.sweep = _stage("sweep")(_horizon_sweep)(scenario, _periods_list(cfg["sweep"]["periods"]))

    dist = cfg.get("distributed")
    if dist:
        ds = scenario if "periods" not in dist else horizon_scenario(scenario, int(dist["periods"]))
        result.trace = _stage("distributed")(run_algorithm1)(
            ds,
            delta=float(dist.get("delta", 0.0)),
            tol=float(dist.get("tol", 1e-8)),
            max_rounds=int(dist.get("max_rounds", 10_000)),
            order=dist.get("order", "sequential"),
            strict=False,
            allow_negative_delta=True,
        )

    if out_dir is not None:
        result.files = tuple(write_bundle(result, Path(out_dir)))
    return result


def _horizon_sweep(s: Scenario, periods: list[int]) -> list[dict]:
    rows = []
    budgets = sorted({c.budget for c in s.consumers})
    for T in periods:
        sT = horizon_scenario(s, T)
        out = stackelberg_equilibrium(sT, check=False)
        util = {}
        for b in budgets:
            idx = [n for n, c in enumerate(sT.consumers) if c.budget == b]
            util[b] = float(np.mean(out.consumer_utilities[idx]))
        for k, c in enumerate(sT.companies):
            rows.append({
                "periods": T, "company": c.id, "allocation": float(sT.companies[k].capacity[0]),
                "price": float(out.prices[k, 0]), "revenue": float(out.revenues[k]),
                "flags": "|".join(out.flags.labels()),
                **{f"utility_budget_{b:g}": u for b, u in util.items()},
            })
    return rows


def write_bundle(result: CaseStudyResult, out: Path) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    written = []

    eq = outcome_to_dict(result.scenario, result.outcome)
    eq["name"] = result.name
    _json_dump(eq, out / "equilibrium.json")
    written.append("equilibrium.json")

    sav = result.savings.to_dict()
    sav["minimum_budget"] = result.minimum_budget
    sav["energy_min"] = result.scenario.consumers[0].energy_min
    sav["experimental_price_variance"] = float(np.var(result.series.prices))
    sav["game_price_variance"] = float(np.var(result.outcome.prices))
    _json_dump(sav, out / "savings.json")
    written.append("savings.json")

    s, o = result.scenario, result.outcome
    sold = o.demands.sum(axis=0)
    with open(out / "series.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "experimental_price", "experimental_load",
                    *[f"price_{c.id}" for c in s.companies], *[f"demand_{c.id}" for c in s.companies],
                    "experimental_cumulative", "game_cumulative"])
        for t in range(s.T):
            w.writerow([t + 1, repr(float(result.series.prices[t])), repr(float(result.series.load[t])),
                        *[repr(float(o.prices[k, t])) for k in range(s.K)],
                        *[repr(float(sold[k, t])) for k in range(s.K)],
                        repr(float(result.savings.experimental_cumulative[t])),
                        repr(float(result.savings.game_cumulative[t]))])
    written.append("series.csv")

    if result.sweep:
        keys = list(result.sweep[0].keys())
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for row in result.sweep:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        written.append("sweep.csv")

    if result.trace is not None:
        result.trace.write_jsonl(out / "trace.jsonl")
        result.trace.write_summary(out / "trace_summary.json")
        written += ["trace.jsonl", "trace_summary.json"]
    return written


def fixture_config(name: str) -> Path:
    """Path of a bundled case-study config (``ecogrid``, ``ecogrid_market``, ``dutch``...)."""
    path = DATA_DIR / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"no bundled config named {name!r}")
    return path
