"""Distributed price iteration with local information only.

Companies adjust each price by excess demand,

    p <- p + (sum_n d_n - G) / eps,    eps = (G + Z) / p + delta,

where ``G`` is the company's own capacity for that period and ``Z`` the
aggregate preference offset (the consumer count when every ``zeta`` is 1).
Consumers answer every price board with their closed-form demands. Agents
talk only through typed messages, which are logged so a run can be audited
for leaks of budgets or capacities.

Two update orders are available. ``"sequential"`` visits the cells in
``(k, t)`` order and lets consumers re-report after every price change.
``"synchronous"`` updates every cell against a single demand board per
round; it is cheaper but not the order the algorithm prescribes.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator

import numpy as np

from .equilibrium import equilibrium_prices_closed_form, stackelberg_equilibrium
from .errors import CapExceeded, Diverged, InvalidScenario, NonPositivePrice
from .model import Scenario, validate_scenario

log = logging.getLogger(__name__)

PRICE_CEILING = 1e12
BROADCAST = "consumers"


class MessageKind(str, Enum):
    PRICE_UPDATE = "price-update"
    DEMAND_REPORT = "demand-report"
    NO_CHANGE = "no-change"


ALLOWED_KINDS = frozenset(k.value for k in MessageKind)


@dataclass(frozen=True)
class Message:
    round: int
    sender: str
    receiver: str
    kind: str
    company: int
    period: int
    value: float | None

    def to_dict(self) -> dict:
        return {
            "round": self.round, "sender": self.sender, "receiver": self.receiver,
            "kind": self.kind, "period": self.period, "company": self.company,
            "value": self.value,
        }


@dataclass
class _Batch:
    # One send event: a message per sender, all to the same receiver/cell.
    round: int
    kind: str
    senders: tuple[str, ...]
    receiver: str
    company: int
    period: int
    values: np.ndarray | None


class MessageLog:
    """Append-only message log stored in batches.

    Demand reports from all consumers for one cell arrive as a single batch,
    which keeps long runs compact. Iterating yields individual
    :class:`Message` objects in send order.
    """

    def __init__(self) -> None:
        self._batches: list[_Batch] = []
        self._count = 0

    def append(self, round: int, kind: str, senders, receiver: str, company: int,
               period: int, values=None) -> None:
        senders = tuple(senders)
        vals = None if values is None else np.array(values, dtype=float).reshape(len(senders))
        self._batches.append(_Batch(round, str(kind), senders, receiver, company, period, vals))
        self._count += len(senders)

    def __len__(self) -> int:
        return self._count

    def __iter__(self) -> Iterator[Message]:
        for b in self._batches:
            for i, sender in enumerate(b.senders):
                value = None if b.values is None else float(b.values[i])
                yield Message(b.round, sender, b.receiver, b.kind, b.company, b.period, value)

    def __getitem__(self, index: int) -> Message:
        for i, m in enumerate(self):
            if i == index:
                return m
        raise IndexError(index)

    def replace(self, index: int, message: Message) -> None:
        """Overwrite one message; used to build corrupted logs for audits."""
        rebuilt = MessageLog()
        for i, m in enumerate(self):
            m = message if i == index else m
            vals = None if m.value is None else [m.value]
            rebuilt.append(m.round, m.kind, [m.sender], m.receiver, m.company, m.period, vals)
        if index >= len(rebuilt):
            raise IndexError(index)
        self._batches, self._count = rebuilt._batches, rebuilt._count

    def batches(self) -> list[_Batch]:
        return list(self._batches)


@dataclass
class CompanyAgent:
    """A company's private view: its own capacities and prices, nothing else."""

    id: str
    index: int
    capacity: np.ndarray
    prices: np.ndarray
    population_offset: float
    delta: float = 0.0
    tol: float = 1e-8
    last_demand: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        self.capacity = np.array(self.capacity, dtype=float)
        self.prices = np.array(self.prices, dtype=float)
        if self.last_demand is None:
            self.last_demand = np.full(self.capacity.shape, math.nan)

    def epsilon(self, t: int, price: float | None = None) -> float:
        return epsilon_schedule(self, t, self.prices[t] if price is None else price)

    def snapshot(self) -> dict:
        return {
            "id": self.id,
            "capacity": self.capacity.tolist(),
            "prices": self.prices.tolist(),
            "population_offset": self.population_offset,
            "delta": self.delta,
            "last_demand": self.last_demand.tolist(),
        }


COMPANY_STATE_FIELDS = frozenset(
    ["id", "capacity", "prices", "population_offset", "delta", "last_demand"]
)
CONSUMER_STATE_FIELDS = frozenset(["id", "budget", "energy_min", "gamma", "zeta", "board"])


@dataclass
class ConsumerAgent:
    id: str
    budget: float
    energy_min: float
    gamma: float
    zeta: float
    board: np.ndarray

    def snapshot(self) -> dict:
        return {
            "id": self.id, "budget": self.budget, "energy_min": self.energy_min,
            "gamma": self.gamma, "zeta": self.zeta, "board": self.board.tolist(),
        }


class ConsumerPopulation:
    """All consumer agents, stored column-wise so a round can be vectorized.

    Row ``n`` of every array belongs to consumer ``n`` alone; a demand report
    for consumer ``n`` reads only row ``n``.
    """

    def __init__(self, s: Scenario, initial_board: np.ndarray) -> None:
        self.ids = tuple(f"consumer:{c.id}" for c in s.consumers)
        self.budget = s.budgets()
        self.energy_min = np.array([c.energy_min for c in s.consumers])
        self.gamma = np.array([c.gamma for c in s.consumers])
        self.zeta = s.zetas()
        self.board = np.repeat(initial_board[None].astype(float), s.N, axis=0)
        self._board_sum = self.board.sum(axis=(1, 2))

    def receive_price(self, k: int, t: int, price: float) -> None:
        self._board_sum += price - self.board[:, k, t]
        self.board[:, k, t] = price

    def report(self, k: int, t: int) -> np.ndarray:
        """Each consumer's closed-form demand for cell ``(k, t)``."""
        _, K, T = self.board.shape
        p = self.board[:, k, t]
        return (self.budget + self.zeta * self._board_sum) / (K * T * p) - self.zeta

    def report_all(self) -> np.ndarray:
        _, K, T = self.board.shape
        level = self.budget + self.zeta * self._board_sum
        return level[:, None, None] / (K * T * self.board) - self.zeta[:, None, None]

    def agent(self, n: int) -> ConsumerAgent:
        return ConsumerAgent(
            self.ids[n], float(self.budget[n]), float(self.energy_min[n]),
            float(self.gamma[n]), float(self.zeta[n]), self.board[n].copy(),
        )


def epsilon_schedule(agent: CompanyAgent, t: int, price: float) -> float:
    """Step denominator ``(G(t) + Z) / p + delta``."""
    if not price > 0:
        raise NonPositivePrice(f"price must be > 0, got {price}")
    return (agent.capacity[t] + agent.population_offset) / price + agent.delta


def price_update(agent: CompanyAgent, t: int, aggregate_demand: float) -> tuple[float, bool]:
    """One excess-demand step for cell ``t`` of ``agent``.

    Returns the new price and whether the cell counts as changed. The test
    is made on the undamped step ``|excess| * p / (G + Z)`` against
    ``tol * max(1, p)``: for ``delta = 0`` that is the step itself, and for
    ``delta > 0`` it keeps a heavily damped cell from stopping early. The
    agent's state is not modified.
    """
    p = float(agent.prices[t])
    eps = epsilon_schedule(agent, t, p)
    excess = aggregate_demand - agent.capacity[t]
    new = p + excess / eps
    undamped = abs(excess) * p / (agent.capacity[t] + agent.population_offset)
    changed = max(abs(new - p), undamped) > agent.tol * max(1.0, abs(p))
    return new, changed


@dataclass
class RoundRecord:
    index: int
    prices: np.ndarray
    demand: np.ndarray
    deltas: np.ndarray
    bound_ok: bool


@dataclass
class IterationTrace:
    """Full record of one run.

    ``outcome`` is ``"converged"``, ``"diverged"`` or ``"cap"``;
    ``final_round`` is the round in which it was decided.
    """

    rounds: list[RoundRecord]
    messages: MessageLog
    outcome: str
    final_round: int
    final_prices: np.ndarray
    order: str
    company_states: list[dict]
    consumer_states: list[dict]
    max_residual: float
    closed_form_gap: float | None = None
    reason: str = ""

    @property
    def converged(self) -> bool:
        return self.outcome == "converged"

    def summary(self) -> dict:
        return {
            "outcome": self.outcome,
            "rounds": self.final_round,
            "final_prices": self.final_prices.tolist(),
            "max_residual": self.max_residual,
            "order": self.order,
            "closed_form_gap": self.closed_form_gap,
            "messages": len(self.messages),
        }

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for m in self.messages:
                fh.write(json.dumps(m.to_dict()) + "\n")

    def write_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def _initial_board(s: Scenario, initial_prices, seed: int | None) -> np.ndarray:
    shape = (s.K, s.T)
    if initial_prices is None:
        return np.ones(shape)
    if isinstance(initial_prices, str):
        if initial_prices != "random":
            raise ValueError(f"unknown initialization {initial_prices!r}")
        rng = np.random.default_rng(seed)
        return rng.uniform(0.1, 2.0, size=shape)
    board = np.broadcast_to(np.asarray(initial_prices, dtype=float), shape).copy()
    if not np.all(board > 0):
        raise NonPositivePrice("initial prices must be > 0")
    return board


def _bad_price(p: float) -> bool:
    return not math.isfinite(p) or p <= 0 or abs(p) > PRICE_CEILING


def run_algorithm1(
    s: Scenario,
    delta: float = 0.0,
    tol: float = 1e-8,
    max_rounds: int = 10_000,
    order: str = "sequential",
    *,
    initial_prices=None,
    seed: int | None = None,
    strict: bool = True,
    allow_negative_delta: bool = False,
) -> IterationTrace:
    """Run the distributed price iteration on ``s``.

    A round converges when every cell emits a no-change signal. On
    divergence (a non-positive, non-finite or runaway price) or when
    ``max_rounds`` is exhausted, :class:`Diverged` or :class:`CapExceeded`
    is raised with the trace attached, unless ``strict`` is false.
    Negative ``delta`` voids the convergence guarantee and must be asked
    for explicitly with ``allow_negative_delta``.
    """
    violations = validate_scenario(s)
    if violations:
        raise InvalidScenario(violations)
    if tol <= 0 or max_rounds < 1:
        raise ValueError("tol must be > 0 and max_rounds >= 1")
    if delta < 0 and not allow_negative_delta:
        raise ValueError("negative delta is only allowed with allow_negative_delta=True")
    if order not in ("sequential", "synchronous"):
        raise ValueError(f"unknown order {order!r}")

    K, T = s.K, s.T
    board = _initial_board(s, initial_prices, seed)
    Z = s.aggregate_Z
    companies = [
        CompanyAgent(f"company:{c.id}", k, np.array(c.capacity), board[k].copy(), Z, delta, tol)
        for k, c in enumerate(s.companies)
    ]
    consumers = ConsumerPopulation(s, board)
    msgs = MessageLog()
    rounds: list[RoundRecord] = []
    outcome, reason, final_round = "cap", "", max_rounds

    def update_cell(i: int, k: int, t: int, demands: np.ndarray) -> tuple[float, float, bool]:
        agent = companies[k]
        msgs.append(i, MessageKind.DEMAND_REPORT.value, consumers.ids, agent.id, k, t, demands)
        aggregate = math.fsum(demands)
        agent.last_demand[t] = aggregate
        p = agent.prices[t]
        shortfall = agent.capacity[t] - aggregate
        bound_ok = shortfall <= 0 or p * agent.epsilon(t) > shortfall
        new, changed = price_update(agent, t, aggregate)
        if changed:
            agent.prices[t] = new
            msgs.append(i, MessageKind.PRICE_UPDATE.value, [agent.id], BROADCAST, k, t, [new])
            if not _bad_price(new):
                consumers.receive_price(k, t, new)
        else:
            msgs.append(i, MessageKind.NO_CHANGE.value, [agent.id], BROADCAST, k, t, None)
        return aggregate, (new - p) if changed else 0.0, bound_ok

    for i in range(1, max_rounds + 1):
        demand = np.empty((K, T))
        deltas = np.zeros((K, T))
        all_quiet, bound_ok, broke = True, True, False
        snapshot = consumers.report_all() if order == "synchronous" else None
        for k in range(K):
            for t in range(T):
                reports = snapshot[:, k, t] if snapshot is not None else consumers.report(k, t)
                agg, dp, ok = update_cell(i, k, t, reports)
                demand[k, t], deltas[k, t] = agg, dp
                bound_ok &= ok
                if dp != 0.0:
                    all_quiet = False
                    if _bad_price(companies[k].prices[t]):
                        broke = True
                        break
            if broke:
                break
        prices = np.array([c.prices for c in companies])
        rounds.append(RoundRecord(i, prices, demand, deltas, bool(bound_ok)))
        if broke:
            outcome, final_round = "diverged", i
            reason = "price left (0, 1e12] or became non-finite"
            break
        if all_quiet:
            outcome, final_round = "converged", i
            break

    final = np.array([c.prices for c in companies])
    G = s.capacity_matrix()
    with np.errstate(all="ignore"):
        residual = float(np.nanmax(np.abs(rounds[-1].demand - G) / np.maximum(G, 1e-300)))
    trace = IterationTrace(
        rounds, msgs, outcome, final_round, final, order,
        [c.snapshot() for c in companies],
        [consumers.agent(n).snapshot() for n in range(s.N)],
        residual, reason=reason,
    )
    if outcome == "converged":
        trace.closed_form_gap = _closed_form_gap(s, final)
    log.debug("algorithm finished: %s after %d rounds", outcome, final_round)

    if strict and outcome == "diverged":
        raise Diverged(f"diverged in round {final_round}: {reason}", trace)
    if strict and outcome == "cap":
        raise CapExceeded(f"no convergence within {max_rounds} rounds", trace)
    return trace


def _closed_form_gap(s: Scenario, prices: np.ndarray) -> float | None:
    """Relative gap to the closed-form prices, or None if that comparison is void."""
    try:
        outcome = stackelberg_equilibrium(s, check=False)
    except Exception:  # degenerate inputs: nothing to compare against
        return None
    if outcome.flags.regime_flagged:
        return None
    target = equilibrium_prices_closed_form(s)
    return float(np.max(np.abs(prices - target) / np.maximum(1.0, np.abs(target))))


@dataclass
class AuditReport:
    passed: bool
    offending: list[tuple[int, str]]
    checked_messages: int

    def __bool__(self) -> bool:
        return self.passed


def privacy_audit(trace: IterationTrace, s: Scenario) -> AuditReport:
    """Check that no message or agent state carries private data of others.

    Messages must be of a known kind, demand reports must go from a consumer
    to a company, price updates and no-change signals from a company to the
    consumers, and no-change signals carry no value. Company states may hold
    only their own capacity; consumer states only their own parameters.
    """
    consumer_ids = {f"consumer:{c.id}" for c in s.consumers}
    company_ids = [f"company:{c.id}" for c in s.companies]
    offending: list[tuple[int, str]] = []

    index = 0
    for b in trace.messages.batches():
        problems = []
        if b.kind not in ALLOWED_KINDS:
            problems.append(f"forbidden payload kind {b.kind!r}")
        elif b.kind == MessageKind.DEMAND_REPORT.value:
            if b.receiver not in company_ids or b.receiver != company_ids[b.company]:
                problems.append("demand report not addressed to the cell's company")
            if any(snd not in consumer_ids for snd in b.senders):
                problems.append("demand report from a non-consumer")
        else:
            if b.receiver != BROADCAST or any(snd != company_ids[b.company] for snd in b.senders):
                problems.append("price signal not from the cell's company to consumers")
            if b.kind == MessageKind.NO_CHANGE.value and b.values is not None:
                problems.append("no-change signal carries a value")
        for j in range(len(b.senders)):
            for p in problems:
                offending.append((index + j, p))
        index += len(b.senders)

    for k, state in enumerate(trace.company_states):
        extra = set(state) - COMPANY_STATE_FIELDS
        if extra:
            offending.append((-1, f"company {k} state holds {sorted(extra)}"))
        if list(state.get("capacity", [])) != list(s.companies[k].capacity):
            offending.append((-1, f"company {k} state holds a capacity that is not its own"))
    for n, state in enumerate(trace.consumer_states):
        extra = set(state) - CONSUMER_STATE_FIELDS
        if extra:
            offending.append((-1, f"consumer {n} state holds {sorted(extra)}"))
        if state.get("budget") != s.consumers[n].budget:
            offending.append((-1, f"consumer {n} state holds a budget that is not its own"))

    return AuditReport(not offending, offending, index)
