"""Domain types for the multi-period, multi-company demand-response game.

All quantities use a single unit system: energy in kWh, prices in
currency per kWh, budgets in currency. Price schedules are ``(K, T)`` numpy
arrays indexed ``[company, period]`` and demand profiles are ``(N, K, T)``
arrays indexed ``[consumer, company, period]``; list order of consumers and
companies is the canonical iteration order everywhere.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import ParseError

DEFAULT_PRICE_MIN = 1e-9
DEFAULT_PRICE_MAX = 1e9


def _float_tuple(values: Iterable[float]) -> tuple[float, ...]:
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class Consumer:
    id: str
    budget: float
    energy_min: float = 0.0
    gamma: float = 1.0
    zeta: float = 1.0


@dataclass(frozen=True)
class Company:
    """A seller with per-period power availability and price bounds.

    ``total_capacity`` is the horizon-wide power the company may allocate in
    the allocation game; it defaults to the sum of ``capacity``.
    """

    id: str
    capacity: tuple[float, ...]
    price_min: tuple[float, ...] = ()
    price_max: tuple[float, ...] = ()
    total_capacity: float | None = None

    def __post_init__(self) -> None:
        cap = _float_tuple(self.capacity)
        object.__setattr__(self, "capacity", cap)
        lo = _float_tuple(self.price_min) or (DEFAULT_PRICE_MIN,) * len(cap)
        hi = _float_tuple(self.price_max) or (DEFAULT_PRICE_MAX,) * len(cap)
        object.__setattr__(self, "price_min", lo)
        object.__setattr__(self, "price_max", hi)
        if self.total_capacity is None:
            object.__setattr__(self, "total_capacity", math.fsum(cap))
        else:
            object.__setattr__(self, "total_capacity", float(self.total_capacity))

    @classmethod
    def with_bounds(
        cls,
        id: str,
        capacity: Sequence[float],
        price_min: float = DEFAULT_PRICE_MIN,
        price_max: float = DEFAULT_PRICE_MAX,
        total_capacity: float | None = None,
    ) -> "Company":
        """Build a company whose price bounds are the same in every period."""
        T = len(capacity)
        return cls(id, tuple(capacity), (price_min,) * T, (price_max,) * T, total_capacity)


@dataclass(frozen=True)
class Scenario:
    consumers: tuple[Consumer, ...]
    companies: tuple[Company, ...]
    periods: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "consumers", tuple(self.consumers))
        object.__setattr__(self, "companies", tuple(self.companies))
        object.__setattr__(self, "periods", int(self.periods))

    @property
    def N(self) -> int:
        return len(self.consumers)

    @property
    def K(self) -> int:
        return len(self.companies)

    @property
    def T(self) -> int:
        return self.periods

    @property
    def aggregate_Z(self) -> float:
        """Sum of the consumers' preference offsets."""
        return math.fsum(c.zeta for c in self.consumers)

    @property
    def aggregate_B(self) -> float:
        """Sum of the consumers' budgets."""
        return math.fsum(c.budget for c in self.consumers)

    def capacity_matrix(self) -> np.ndarray:
        return np.array([c.capacity for c in self.companies], dtype=float)

    def price_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([c.price_min for c in self.companies], dtype=float)
        hi = np.array([c.price_max for c in self.companies], dtype=float)
        return lo, hi

    def budgets(self) -> np.ndarray:
        return np.array([c.budget for c in self.consumers], dtype=float)

    def zetas(self) -> np.ndarray:
        return np.array([c.zeta for c in self.consumers], dtype=float)

    def with_capacities(self, capacity: np.ndarray) -> "Scenario":
        """Return a copy with every company's per-period capacity replaced.

        Totals and price bounds are kept as they are.
        """
        capacity = np.asarray(capacity, dtype=float)
        companies = tuple(
            Company(c.id, tuple(capacity[k]), c.price_min, c.price_max, c.total_capacity)
            for k, c in enumerate(self.companies)
        )
        return Scenario(self.consumers, companies, self.periods)


@dataclass(frozen=True)
class Violation:
    entity: str
    field: str
    rule: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"{self.entity}.{self.field}: {self.rule}"


def _finite_nonneg(x: float) -> bool:
    return math.isfinite(x) and x >= 0


def validate_scenario(s: Scenario) -> list[Violation]:
    """Check every type invariant of a scenario; never raises.

    Returns an empty list when the scenario is valid. Zero-capacity periods
    are not reported here (see :func:`regime_warnings`).
    """
    out: list[Violation] = []
    if s.periods < 1:
        out.append(Violation("scenario", "periods", "periods >= 1"))
    if not s.consumers:
        out.append(Violation("scenario", "consumers", "at least one consumer"))
    if not s.companies:
        out.append(Violation("scenario", "companies", "at least one company"))

    for c in s.consumers:
        name = f"consumer[{c.id}]"
        if not _finite_nonneg(c.budget):
            out.append(Violation(name, "budget", "budget finite and >= 0"))
        if not _finite_nonneg(c.energy_min):
            out.append(Violation(name, "energy_min", "energy_min finite and >= 0"))
        if not (math.isfinite(c.gamma) and c.gamma > 0):
            out.append(Violation(name, "gamma", "gamma > 0"))
        if not (math.isfinite(c.zeta) and c.zeta >= 1):
            out.append(Violation(name, "zeta", "zeta >= 1"))

    for c in s.companies:
        name = f"company[{c.id}]"
        for fname in ("capacity", "price_min", "price_max"):
            if len(getattr(c, fname)) != s.periods:
                out.append(Violation(name, fname, f"{fname} length = T"))
        if any(not _finite_nonneg(g) for g in c.capacity):
            out.append(Violation(name, "capacity", "capacity finite and >= 0"))
        if not _finite_nonneg(c.total_capacity):
            out.append(Violation(name, "total_capacity", "total_capacity finite and >= 0"))
        if any(not (p > 0) for p in c.price_min):
            out.append(Violation(name, "price_min", "price_min > 0"))
        if any(not (lo <= hi) for lo, hi in zip(c.price_min, c.price_max)):
            out.append(Violation(name, "price_max", "price_min <= price_max"))
    return out


def regime_warnings(s: Scenario) -> list[Violation]:
    """Non-fatal findings: periods where a company offers no power."""
    out = []
    for c in s.companies:
        for t, g in enumerate(c.capacity):
            if g == 0:
                out.append(
                    Violation(f"company[{c.id}]", f"capacity[{t}]", "zero capacity", "warning")
                )
    return out


# -- JSON serialization -------------------------------------------------------


def _vector(value: Any, T: int, where: str) -> list[float]:
    if isinstance(value, (int, float)):
        return [float(value)] * T
    if not isinstance(value, list):
        raise ParseError(f"{where}: expected a number or an array")
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from exc


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        T = int(doc["periods"])
        consumers = [
            Consumer(
                id=str(c["id"]),
                budget=float(c["budget"]),
                energy_min=float(c.get("energy_min", 0.0)),
                gamma=float(c.get("gamma", 1.0)),
                zeta=float(c.get("zeta", 1.0)),
            )
            for c in doc["consumers"]
        ]
        companies = []
        for i, c in enumerate(doc["companies"]):
            where = f"companies[{i}]"
            cap = _vector(c["capacity"], T, f"{where}.capacity")
            lo = _vector(c.get("price_min", DEFAULT_PRICE_MIN), T, f"{where}.price_min")
            hi = _vector(c.get("price_max", DEFAULT_PRICE_MAX), T, f"{where}.price_max")
            total = c.get("total_capacity")
            companies.append(
                Company(str(c["id"]), tuple(cap), tuple(lo), tuple(hi),
                        None if total is None else float(total))
            )
    except KeyError as exc:
        raise ParseError(f"missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc)) from exc
    return Scenario(tuple(consumers), tuple(companies), T)


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "periods": s.periods,
        "consumers": [
            {"id": c.id, "budget": c.budget, "energy_min": c.energy_min,
             "gamma": c.gamma, "zeta": c.zeta}
            for c in s.consumers
        ],
        "companies": [
            {"id": c.id, "capacity": list(c.capacity), "price_min": list(c.price_min),
             "price_max": list(c.price_max), "total_capacity": c.total_capacity}
            for c in s.companies
        ],
    }


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ParseError("scenario document must be a JSON object")
    return scenario_from_dict(doc)


def dump_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n")


def check_prices(prices: np.ndarray) -> np.ndarray:
    """Coerce a price schedule to a float ``(K, T)`` array."""
    p = np.asarray(prices, dtype=float)
    if p.ndim != 2:
        raise ValueError(f"price schedule must be 2-D (K, T), got shape {p.shape}")
    return p
