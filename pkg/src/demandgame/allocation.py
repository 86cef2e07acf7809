"""Company-side power allocation game.

Each company splits its horizon total ``G_total`` across the ``T`` periods.
With equilibrium prices substituted in, company ``k`` earns

    U_k = B * sum_t G_k(t) / ((G_k(t) + N) * (K*T - sum_{j,tau} N / (G_j(tau) + N)))

which is strictly concave and increasing in each own allocation; the unique
Nash equilibrium is the uniform split ``G_total / T``. The game is only
defined for ``gamma = zeta = 1`` consumers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDenominator, ScaleTooLarge, ZetaNotUniform
from .model import Scenario


@dataclass(frozen=True)
class AllocationProfile:
    allocations: np.ndarray  # (K, T), kWh per period

    @property
    def totals(self) -> np.ndarray:
        return self.allocations.sum(axis=1)

    def is_feasible(self, totals: np.ndarray, atol: float = 1e-9) -> bool:
        a = self.allocations
        totals = np.asarray(totals, dtype=float)
        return bool(
            np.all(a >= 0)
            and np.all(a <= totals[:, None] + atol)
            and np.all(self.totals <= totals + atol * np.maximum(1.0, totals))
        )


def _require_unit_preferences(s: Scenario) -> None:
    if any(c.zeta != 1.0 or c.gamma != 1.0 for c in s.consumers):
        raise ZetaNotUniform("the allocation game assumes gamma = zeta = 1 for every consumer")


def revenues_given_allocation(alloc: AllocationProfile | np.ndarray, s: Scenario) -> np.ndarray:
    """Equilibrium revenue of every company when capacities are ``alloc``."""
    _require_unit_preferences(s)
    G = np.asarray(getattr(alloc, "allocations", alloc), dtype=float)
    if np.any(G < 0):
        raise ValueError("allocations must be non-negative")
    N = float(s.N)
    # K*T - sum N/(G+N) == sum G/(G+N)
    denom = math.fsum((G / (G + N)).ravel())
    if not denom > 0:
        raise DegenerateDenominator("no company allocates any power")
    B = s.aggregate_B
    return np.array([B * math.fsum(row / (row + N)) / denom for row in G])


def revenue_given_allocation(k: int, alloc: AllocationProfile | np.ndarray, s: Scenario) -> float:
    return float(revenues_given_allocation(alloc, s)[k])


def allocation_nash_equilibrium(s: Scenario) -> AllocationProfile:
    """Uniform split of every company's total capacity over the horizon."""
    _require_unit_preferences(s)
    totals = np.array([c.total_capacity for c in s.companies], dtype=float)
    if np.any(totals <= 0):
        raise ValueError("every company needs a positive total capacity")
    alloc = np.repeat((totals / s.T)[:, None], s.T, axis=1)
    return AllocationProfile(alloc)


def project_to_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{x >= 0, sum x = total}``."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def _simplex_grid(T: int, resolution: int, total: float) -> np.ndarray:
    """Simplex points on a ``total / resolution`` lattice, one per row (T <= 3)."""
    steps = np.arange(resolution + 1)
    if T == 2:
        pts = np.stack([steps, resolution - steps], axis=1)
    else:
        i, j = np.meshgrid(steps, steps, indexing="ij")
        keep = i + j <= resolution
        pts = np.stack([i[keep], j[keep], resolution - i[keep] - j[keep]], axis=1)
    return total * pts / resolution


def best_response_oracle(
    k: int,
    rivals_alloc: AllocationProfile | np.ndarray,
    s: Scenario,
    grid_resolution: int = 200,
    *,
    restarts: int = 16,
    max_iter: int = 10_000,
    seed: int = 0,
) -> np.ndarray:
    """Numerically maximize company ``k``'s revenue over its allocation simplex.

    Rows other than ``k`` of ``rivals_alloc`` are held fixed. For ``T <= 3``
    a lattice search seeds the ascent; otherwise ``restarts`` random
    Dirichlet starts are used. Each start is refined by projected gradient
    ascent with backtracking, central-difference gradients and a step of
    ``1e-2 * G_total`` to begin with. Test-scale only: ``T <= 4``.
    """
    base = np.array(getattr(rivals_alloc, "allocations", rivals_alloc), dtype=float)
    T = base.shape[1]
    if T > 4:
        raise ScaleTooLarge(f"oracle is limited to T <= 4, got T = {T}")
    if grid_resolution < 10:
        raise ValueError("grid_resolution must be at least 10")
    total = s.companies[k].total_capacity
    if T == 1:
        return np.array([total])

    # Own revenue is B f / (rest + f) with f = sum_t g_t / (g_t + N) and
    # rest the same sum over the rivals' rows.
    _require_unit_preferences(s)
    N = float(s.N)
    B = s.aggregate_B
    others = np.delete(base, k, axis=0)
    rest = math.fsum((others / (others + N)).ravel())

    def batch_revenue(rows: np.ndarray) -> np.ndarray:
        f = np.sum(rows / (rows + N), axis=-1)
        return B * f / (rest + f)

    def revenue(row: np.ndarray) -> float:
        return float(batch_revenue(row))

    def gradient(row: np.ndarray) -> np.ndarray:
        h = 1e-6 * max(total, 1.0)
        g = np.empty(T)
        for t in range(T):
            e = np.zeros(T)
            e[t] = h
            lo = np.maximum(row - e, 0.0)
            g[t] = (revenue(row + e) - revenue(lo)) / (row[t] + h - lo[t])
        return g

    def ascend(x: np.ndarray) -> tuple[np.ndarray, float]:
        fx = revenue(x)
        step = 1e-2 * total
        for _ in range(max_iter):
            g = gradient(x)
            g = g / max(np.max(np.abs(g)), 1e-300)
            while True:
                y = project_to_simplex(x + step * g, total)
                fy = revenue(y)
                if fy > fx or step < 1e-14 * total:
                    break
                step *= 0.5
            if fy <= fx:
                break
            moved = np.max(np.abs(y - x))
            x, fx = y, fy
            step *= 2.0
            if moved < 1e-13 * total:
                break
        return x, fx

    # The barycenter goes first and later starts must beat it strictly: with
    # a single company the revenue is flat (always B) and any split is optimal.
    rng = np.random.default_rng(seed)
    starts = [np.full(T, total / T)]
    if T <= 3:
        grid = _simplex_grid(T, grid_resolution, total)
        starts.append(grid[np.argmax(batch_revenue(grid))])
    starts += [total * rng.dirichlet(np.ones(T)) for _ in range(restarts)]

    best_x, best_f = None, -math.inf
    for x0 in starts:
        x, f = ascend(np.asarray(x0, dtype=float))
        if f > best_f + 1e-12 * abs(best_f) or best_x is None:
            best_x, best_f = x, f
    return best_x
