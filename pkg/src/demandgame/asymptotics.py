"""Symmetric-market regimes: many periods, many consumers.

In the symmetric market every company has the same horizon total
``G_total``, split uniformly over the periods, and every consumer has
``gamma = zeta = 1``. Equilibrium prices then no longer depend on ``T``:

    p = sum(B) / (K * G_total),   d_n = G_total * B_n / (T * sum(B)),

and a consumer's utility ``K T ln(1 + G_total B_n / (T sum B))`` climbs
towards ``K G_total B_n / sum B``. Every sweep point is also recomputed
through :mod:`demandgame.equilibrium` on a concrete scenario when that is
cheap enough, and the two must agree.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .equilibrium import consumer_best_response, consumer_utility, equilibrium_prices_closed_form
from .errors import AsymmetricScenario, IdentityViolation, NonPositiveInput
from .model import Company, Consumer, Scenario

CROSSCHECK_RTOL = 1e-9
# Concrete scenarios are only built up to these sizes.
MAX_CROSSCHECK_N = 10_000
MAX_CROSSCHECK_KT = 4096


@dataclass(frozen=True)
class SymmetricMarket:
    """K identical companies sharing nothing but the consumers.

    ``budgets`` lists every consumer's budget; ``consumer`` picks whose
    utility and demand a sweep reports.
    """

    companies: int
    total_capacity: float
    budgets: tuple[float, ...]
    consumer: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "budgets", tuple(float(b) for b in self.budgets))
        if self.companies < 1 or not self.budgets:
            raise AsymmetricScenario("need at least one company and one consumer")
        if self.total_capacity <= 0 or any(b <= 0 for b in self.budgets):
            raise AsymmetricScenario("capacities and budgets must be positive")
        if not 0 <= self.consumer < len(self.budgets):
            raise IndexError(self.consumer)

    @classmethod
    def from_scenario(cls, s: Scenario, consumer: int = 0) -> "SymmetricMarket":
        totals = {c.total_capacity for c in s.companies}
        if len(totals) != 1:
            raise AsymmetricScenario("companies have different total capacities")
        if any(c.zeta != 1.0 or c.gamma != 1.0 for c in s.consumers):
            raise AsymmetricScenario("the symmetric regime needs gamma = zeta = 1")
        return cls(s.K, totals.pop(), tuple(c.budget for c in s.consumers), consumer)

    def scenario(self, periods: int) -> Scenario:
        """Concrete scenario with capacities at the uniform allocation."""
        g = self.total_capacity / periods
        consumers = tuple(Consumer(f"n{i}", b) for i, b in enumerate(self.budgets))
        companies = tuple(
            Company.with_bounds(f"k{k}", [g] * periods, total_capacity=self.total_capacity)
            for k in range(self.companies)
        )
        return Scenario(consumers, companies, periods)


@dataclass(frozen=True)
class SweepPoint:
    axis_value: int
    price: float
    demand_per_cell: float
    user_utility: float
    company_revenue: float


@dataclass(frozen=True)
class RegimeSweepResult:
    axis: str
    points: tuple[SweepPoint, ...]
    limit_values: dict = field(default_factory=dict)
    crosschecked: tuple[int, ...] = ()

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["axis_value", "price", "demand_per_cell", "user_utility", "company_revenue"])
            for p in self.points:
                w.writerow([p.axis_value, repr(p.price), repr(p.demand_per_cell),
                            repr(p.user_utility), repr(p.company_revenue)])

    def write_limits(self, path: str | Path) -> None:
        doc = {"axis": self.axis, **self.limit_values}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def _crosscheck(scenario: Scenario, consumer_index: int, point: SweepPoint) -> None:
    prices = equilibrium_prices_closed_form(scenario)
    br = consumer_best_response(scenario.consumers[consumer_index], prices)
    utility = consumer_utility(scenario.consumers[consumer_index], br.demands)
    revenue = math.fsum((prices[0] * scenario.capacity_matrix()[0]))
    checks = {
        "price": (float(prices.max()), point.price),
        "price spread": (float(prices.min()), point.price),
        "demand": (float(br.demands.max()), point.demand_per_cell),
        "utility": (utility, point.user_utility),
        "revenue": (revenue, point.company_revenue),
    }
    for name, (general, special) in checks.items():
        if _rel(general, special) > CROSSCHECK_RTOL:
            raise IdentityViolation(
                f"{name} at axis value {point.axis_value}: general {general!r} vs symmetric {special!r}"
            )


def _sorted_unique(values: Sequence[int]) -> list[int]:
    out = sorted({int(v) for v in values})
    if not out or out[0] < 1:
        raise ValueError("axis values must be positive integers")
    return out


def sweep_periods(
    base: SymmetricMarket, T_values: Sequence[int], *, crosscheck: bool = True
) -> RegimeSweepResult:
    """Equilibrium of ``base`` for each horizon length in ``T_values``."""
    K, G = base.companies, base.total_capacity
    total_B = math.fsum(base.budgets)
    share = base.budgets[base.consumer] / total_B
    price = total_B / (K * G)
    points, checked = [], []
    for T in _sorted_unique(T_values):
        demand = G * share / T
        utility = K * T * math.log1p(demand)
        point = SweepPoint(T, price, demand, utility, total_B / K)
        if crosscheck and len(base.budgets) <= MAX_CROSSCHECK_N and K * T <= MAX_CROSSCHECK_KT:
            _crosscheck(base.scenario(T), base.consumer, point)
            checked.append(T)
        points.append(point)
    limits = {
        "utility": K * G * share,
        "demand": 0.0,
        "revenue": total_B / K,
        "price": price,
    }
    return RegimeSweepResult("periods", tuple(points), limits, tuple(checked))


def sweep_population(
    budget: float,
    companies: int,
    periods: int,
    allocation: float,
    N_values: Sequence[int],
    *,
    crosscheck: bool = True,
) -> RegimeSweepResult:
    """Equilibrium as identical consumers (each with ``budget``) are added.

    ``allocation`` is each company's per-period capacity ``G_total / T``.
    Prices grow like ``N`` and per-cell demands shrink like ``1 / N``; both
    trends are asserted across the sweep.
    """
    if min(budget, allocation) <= 0 or companies < 1 or periods < 1:
        raise AsymmetricScenario("budget, allocation, companies and periods must be positive")
    K, T = companies, periods
    points, checked = [], []
    for N in _sorted_unique(N_values):
        price = N * budget / (K * T * allocation)
        demand = allocation / N
        utility = K * T * math.log1p(demand)
        point = SweepPoint(N, price, demand, utility, N * budget / K)
        if crosscheck and N <= MAX_CROSSCHECK_N and K * T <= MAX_CROSSCHECK_KT:
            market = SymmetricMarket(K, allocation * T, (budget,) * N)
            _crosscheck(market.scenario(T), 0, point)
            checked.append(N)
        points.append(point)
    prices = [p.price for p in points]
    demands = [p.demand_per_cell for p in points]
    if any(b <= a for a, b in zip(prices, prices[1:])) or any(
        b >= a for a, b in zip(demands, demands[1:])
    ):
        raise IdentityViolation("prices must rise and demands fall as N grows")
    limits = {"utility": 0.0, "demand": 0.0, "price": math.inf, "revenue": math.inf}
    return RegimeSweepResult("population", tuple(points), limits, tuple(checked))


def min_company_ratio(budget: float, price_max: float, periods: int, allocation: float) -> float:
    """Smallest ``K / N`` that keeps symmetric prices at or below ``price_max``.

    ``allocation`` is the per-period capacity of one company.
    """
    if min(budget, price_max, periods, allocation) <= 0:
        raise NonPositiveInput("all inputs must be positive")
    return budget / (price_max * periods * allocation)


def symmetric_price(budget: float, consumers: int, companies: int, periods: int, allocation: float) -> float:
    """Equilibrium price with identical consumers and identical companies."""
    return consumers * budget / (companies * periods * allocation)
