"""Consumer best responses, equilibrium prices and Stackelberg assembly.

The production path for prices is the closed form

    p_k(t) = B / (G_k(t) + Z) / (K*T - sum_{j,t} Z / (G_j(t) + Z))

with ``B`` the aggregate budget and ``Z`` the aggregate preference offset.
:func:`equilibrium_prices_linear_solve` rebuilds the same prices from the
capacity-binding linear system ``A P = Y`` and exists for diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IdentityViolation,
    InvalidScenario,
    NegativeDemand,
    NonPositivePrice,
    SingularMatrix,
    ZeroAggregateBudget,
)
from .model import Company, Consumer, Scenario, check_prices, validate_scenario

IDENTITY_RTOL = 1e-9


def _rel_err(actual: float, expected: float) -> float:
    return abs(actual - expected) / max(abs(expected), 1e-300)


def _require_positive(prices: np.ndarray) -> None:
    if not np.all(prices > 0):
        bad = [tuple(int(i) for i in idx) for idx in np.argwhere(~(prices > 0))]
        raise NonPositivePrice(f"prices must be > 0; offending cells {bad}")


@dataclass(frozen=True)
class BestResponse:
    """Closed-form demand of one consumer against a full price board.

    ``payment`` is the consumer's spend at these demands; it equals the
    budget algebraically and ``budget_residual`` records the relative gap.
    ``negative_cells`` lists the ``(k, t)`` cells where the interior formula
    goes below zero, in which case the demands are not a valid optimum.
    """

    demands: np.ndarray
    payment: float
    budget_residual: float
    negative_cells: tuple[tuple[int, int], ...] = ()

    @property
    def regime_ok(self) -> bool:
        return not self.negative_cells

    @property
    def total(self) -> float:
        return math.fsum(self.demands.ravel())


def consumer_best_response(consumer: Consumer, prices: np.ndarray) -> BestResponse:
    """Utility-maximizing demands of ``consumer`` at ``prices`` (shape ``(K, T)``).

    Negative entries are reported through ``negative_cells`` rather than
    clamped; clamping would break budget binding.
    """
    p = check_prices(prices)
    _require_positive(p)
    K, T = p.shape
    zeta = consumer.zeta
    level = consumer.budget + zeta * math.fsum(p.ravel())
    d = level / (K * T * p) - zeta
    payment = math.fsum((p * d).ravel())
    negative = tuple((int(k), int(t)) for k, t in np.argwhere(d < 0))
    residual = _rel_err(payment, consumer.budget)
    return BestResponse(d, payment, residual, negative)


def consumer_utility(consumer: Consumer, demands: np.ndarray) -> float:
    """Logarithmic utility gamma * sum ln(zeta + d) over all companies and periods."""
    d = np.asarray(demands, dtype=float)
    if np.any(d < 0):
        raise NegativeDemand("utility is defined for non-negative demands only")
    return consumer.gamma * math.fsum(np.log(consumer.zeta + d).ravel())


def minimum_budget(consumer: Consumer, prices: np.ndarray) -> float:
    """Smallest budget whose best response meets ``consumer.energy_min`` in total."""
    p = check_prices(prices)
    _require_positive(p)
    K, T = p.shape
    KT = K * T
    inv_sum = math.fsum((1.0 / (KT * p)).ravel())
    return (consumer.energy_min + consumer.zeta * KT) / inv_sum - consumer.zeta * math.fsum(p.ravel())


def _check_pricing_inputs(s: Scenario) -> None:
    violations = validate_scenario(s)
    if violations:
        raise InvalidScenario(violations)
    if s.aggregate_B <= 0:
        raise ZeroAggregateBudget("aggregate budget is zero; equilibrium prices would vanish")


def _price_denominator(G: np.ndarray, Z: float) -> float:
    # K*T - sum Z/(G+Z) rewritten as sum G/(G+Z): same value, no cancellation.
    return math.fsum((G / (G + Z)).ravel())


def equilibrium_prices_closed_form(s: Scenario) -> np.ndarray:
    """Revenue-maximizing prices at which aggregate demand meets every capacity."""
    _check_pricing_inputs(s)
    G = s.capacity_matrix()
    Z = s.aggregate_Z
    denom = _price_denominator(G, Z)
    if not denom > 0:
        raise SingularMatrix("every capacity is zero; prices are undefined")
    return s.aggregate_B / (G + Z) / denom


@dataclass(frozen=True)
class PriceSolveReport:
    closed_form_prices: np.ndarray
    oracle_prices: np.ndarray
    max_rel_discrepancy: float
    sherman_morrison_value: float
    sherman_morrison_expected: float
    decomposition_error: float
    matrix_condition_note: str


def build_price_system(s: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``A`` and ``Y`` of the capacity-binding system, cells in (k, t) order."""
    G = s.capacity_matrix().ravel()
    Z = s.aggregate_Z
    KT = G.size
    A = np.full((KT, KT), -Z)
    A[np.diag_indices(KT)] = KT * (G + Z) - Z
    Y = np.full(KT, s.aggregate_B)
    return A, Y


def equilibrium_prices_linear_solve(s: Scenario) -> PriceSolveReport:
    """Solve ``A P = Y`` densely and compare with the closed form.

    Also checks the rank-one split ``A = diag(KT (G + Z)) + u v^T`` with
    ``u = -Z 1`` and ``v = 1``: the Sherman-Morrison denominator
    ``1 + v^T diag^{-1} u`` is evaluated numerically and against
    ``1 - (1/KT) sum Z / (G + Z)``.
    """
    closed = equilibrium_prices_closed_form(s)
    A, Y = build_price_system(s)
    KT = Y.size
    try:
        P = np.linalg.solve(A, Y)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from exc
    oracle = P.reshape(closed.shape)
    discrepancy = float(np.max(np.abs(closed - oracle) / np.maximum(1.0, np.abs(oracle))))

    Z = s.aggregate_Z
    G = s.capacity_matrix().ravel()
    A_hat = np.diag(KT * (G + Z))
    u = np.full(KT, -Z)
    v = np.ones(KT)
    decomposition_error = float(np.max(np.abs(A - (A_hat + np.outer(u, v)))))
    sm_value = 1.0 + float(v @ np.linalg.solve(A_hat, u))
    sm_expected = 1.0 - math.fsum(Z / (G + Z)) / KT
    if sm_value == 0:
        raise SingularMatrix("Sherman-Morrison denominator vanished")

    cond = float(np.linalg.cond(A))
    note = f"cond(A) = {cond:.3e}"
    if cond > 1e12:
        note += " (ill-conditioned; dense solve loses precision)"
    return PriceSolveReport(closed, oracle, discrepancy, sm_value, sm_expected, decomposition_error, note)


def clamp_prices(
    prices: np.ndarray, companies: tuple[Company, ...] | list[Company]
) -> tuple[np.ndarray, frozenset[tuple[int, int]]]:
    """Project each price onto its ``[price_min, price_max]`` interval.

    Returns the projected schedule and the set of ``(k, t)`` cells that moved.
    """
    p = check_prices(prices)
    lo = np.array([c.price_min for c in companies], dtype=float)
    hi = np.array([c.price_max for c in companies], dtype=float)
    out = np.clip(p, lo, hi)
    moved = frozenset((int(k), int(t)) for k, t in np.argwhere(out != p))
    return out, moved


@dataclass(frozen=True)
class Flags:
    clamped: frozenset[tuple[int, int]] = frozenset()
    negative_demand: tuple[str, ...] = ()
    infeasible_budget: tuple[str, ...] = ()

    @property
    def regime_flagged(self) -> bool:
        """True when the equilibrium identities are not expected to hold."""
        return bool(self.clamped or self.negative_demand)

    def labels(self) -> list[str]:
        out = []
        if self.clamped:
            out.append("clamped")
        if self.negative_demand:
            out.append("negative_demand_regime")
        if self.infeasible_budget:
            out.append("infeasible_budget")
        return out


@dataclass(frozen=True)
class EquilibriumOutcome:
    """Prices, demands and payoffs at the Stackelberg equilibrium.

    ``consumer_utilities`` is NaN for consumers whose closed-form demand is
    negative somewhere. The residual fields hold the relative gaps of the
    revenue-conservation and capacity-binding identities; they are checked
    only when ``flags.regime_flagged`` is false.
    """

    prices: np.ndarray
    demands: np.ndarray
    revenues: np.ndarray
    consumer_utilities: np.ndarray
    flags: Flags = field(default_factory=Flags)
    revenue_residual: float = 0.0
    capacity_residual: float = 0.0
    budget_residual: float = 0.0

    @property
    def total_revenue(self) -> float:
        return math.fsum(self.revenues)


def stackelberg_equilibrium(s: Scenario, *, check: bool = True) -> EquilibriumOutcome:
    """Assemble the full equilibrium: prices, clamping, demands, payoffs.

    With ``check`` set, an unflagged outcome whose identities miss by more
    than 1e-9 relative raises :class:`IdentityViolation`.
    """
    raw = equilibrium_prices_closed_form(s)
    prices, clamped = clamp_prices(raw, s.companies)

    K, T = s.K, s.T
    # Same closed form as consumer_best_response, for all consumers at once.
    budgets = s.budgets()
    zetas = s.zetas()
    gammas = np.array([c.gamma for c in s.consumers])
    level = budgets + zetas * math.fsum(prices.ravel())
    demands = level[:, None, None] / (K * T * prices)[None] - zetas[:, None, None]
    payments = np.einsum("nkt,kt->n", demands, prices)
    ok = np.all(demands >= 0, axis=(1, 2))
    with np.errstate(invalid="ignore", divide="ignore"):
        logs = np.log(zetas[:, None, None] + demands).sum(axis=(1, 2))
    utilities = np.where(ok, gammas * logs, math.nan)
    residuals = np.abs(payments - budgets) / np.maximum(np.abs(budgets), 1e-300)
    budget_residual = float(residuals[ok].max()) if ok.any() else 0.0
    totals = demands.sum(axis=(1, 2))
    e_min = np.array([c.energy_min for c in s.consumers])
    ids = [c.id for c in s.consumers]
    negative = [ids[n] for n in np.flatnonzero(~ok)]
    infeasible = [ids[n] for n in np.flatnonzero(totals < e_min * (1 - IDENTITY_RTOL))]

    sold = demands.sum(axis=0)
    revenues = np.array([math.fsum(prices[k] * sold[k]) for k in range(K)])

    G = s.capacity_matrix()
    B = s.aggregate_B
    revenue_residual = _rel_err(math.fsum(revenues), B)
    capacity_residual = float(np.max(np.abs(sold - G) / np.maximum(G, 1e-300)))
    flags = Flags(clamped, tuple(negative), tuple(infeasible))

    if check and not flags.regime_flagged:
        if revenue_residual > IDENTITY_RTOL:
            raise IdentityViolation(f"revenue conservation off by {revenue_residual:.3e}")
        if capacity_residual > IDENTITY_RTOL:
            raise IdentityViolation(f"capacity binding off by {capacity_residual:.3e}")
    return EquilibriumOutcome(
        prices, demands, revenues, utilities, flags,
        revenue_residual, capacity_residual, budget_residual,
    )
