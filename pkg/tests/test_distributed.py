from __future__ import annotations

import json

import numpy as np
import pytest

from demandgame.distributed import (
    CompanyAgent,
    Message,
    epsilon_schedule,
    price_update,
    privacy_audit,
    run_algorithm1,
)
from demandgame.equilibrium import equilibrium_prices_closed_form
from demandgame.errors import CapExceeded, Diverged, InvalidScenario, NonPositivePrice
from oracles import market_scenario, scalar_iteration, single


def agent(G=5.0, N=1.0, p=2.0, delta=0.0, tol=1e-8):
    return CompanyAgent("company:k", 0, [G], [p], N, delta, tol)


@pytest.mark.parametrize(
    "G, N, p, delta, expected",
    [(5, 1, 2, 0, 3.0), (5, 1, 2, 1000, 1003.0), (2250, 2000, 0.5, 1000, 9500.0)],
)
def test_epsilon(G, N, p, delta, expected):
    assert epsilon_schedule(agent(G, N, p, delta), 0, p) == pytest.approx(expected)


def test_epsilon_needs_positive_price():
    with pytest.raises(NonPositivePrice):
        epsilon_schedule(agent(), 0, 0.0)


def test_update_excess_demand():
    # eps = (5 + 1) / 1 = 6
    new, changed = price_update(agent(p=1.0), 0, 6.0)
    assert new == pytest.approx(7 / 6)
    assert changed


def test_update_fixed_point():
    new, changed = price_update(agent(p=2.0, delta=123.0), 0, 5.0)
    assert new == 2.0 and not changed


def test_update_keeps_price_positive_on_shortfall():
    new, _ = price_update(agent(p=1.0), 0, 3.0)
    assert new == pytest.approx(2 / 3)


def test_larger_delta_means_smaller_steps():
    steps = [abs(price_update(agent(p=1.5, delta=d), 0, 9.0)[0] - 1.5) for d in (0, 1, 10, 100)]
    assert steps == sorted(steps, reverse=True)


def test_single_cell_matches_scalar_reference():
    trace = run_algorithm1(single(), delta=0.0, tol=1e-9)
    ref, rounds = scalar_iteration(10.0, 5.0, 1, 0.0, 1.0, 1e-9)
    assert trace.converged
    assert trace.final_prices[0, 0] == pytest.approx(2.0, rel=1e-8)
    assert trace.final_prices[0, 0] == pytest.approx(ref, rel=1e-12)
    assert trace.final_round == rounds


@pytest.mark.parametrize("order", ["sequential", "synchronous"])
@pytest.mark.parametrize("delta", [0.0, 10.0])
def test_random_scenarios_converge(order, delta):
    rng = np.random.default_rng(17)
    for _ in range(10):
        s = market_scenario(rng)
        tr = run_algorithm1(s, delta=delta, order=order)
        target = equilibrium_prices_closed_form(s)
        gap = np.max(np.abs(tr.final_prices - target) / np.maximum(1.0, target))
        assert tr.converged and gap <= 1e-7
        if tr.closed_form_gap is not None:
            assert tr.closed_form_gap == gap
        assert all(np.all(r.prices > 0) for r in tr.rounds)
        assert all(r.bound_ok for r in tr.rounds)
        assert privacy_audit(tr, s)


def test_start_at_equilibrium_is_quiet():
    s = market_scenario(np.random.default_rng(1))
    tr = run_algorithm1(s, initial_prices=equilibrium_prices_closed_form(s))
    assert tr.final_round == 1
    assert np.all(tr.rounds[0].deltas == 0)


def test_message_count_synchronous():
    s = single()
    tr = run_algorithm1(s, order="synchronous")
    N, K, T = s.N, s.K, s.T
    assert len(tr.messages) == tr.final_round * (N * K * T + K * T)


def test_message_count_sequential():
    s = market_scenario(np.random.default_rng(2))
    tr = run_algorithm1(s)
    assert len(tr.messages) == tr.final_round * (s.N * s.K * s.T + s.K * s.T)


def test_negative_delta_needs_opt_in():
    with pytest.raises(ValueError):
        run_algorithm1(single(), delta=-1.0)


def test_divergence_is_detected():
    with pytest.raises(Diverged) as info:
        run_algorithm1(single(), delta=-10_000.0, allow_negative_delta=True)
    assert info.value.trace.outcome == "diverged"


def test_round_cap():
    with pytest.raises(CapExceeded):
        run_algorithm1(single(), delta=1e6, max_rounds=3)
    tr = run_algorithm1(single(), delta=1e6, max_rounds=3, strict=False)
    assert tr.outcome == "cap" and len(tr.rounds) == 3


def test_invalid_input():
    with pytest.raises(InvalidScenario):
        run_algorithm1(single(zeta=0.2))
    with pytest.raises(ValueError):
        run_algorithm1(single(), tol=0.0)
    with pytest.raises(ValueError):
        run_algorithm1(single(), order="random")


def test_seeded_runs_are_identical(tmp_path):
    s = market_scenario(np.random.default_rng(9))
    a = run_algorithm1(s, delta=10.0, initial_prices="random", seed=42)
    b = run_algorithm1(s, delta=10.0, initial_prices="random", seed=42)
    a.write_jsonl(tmp_path / "a.jsonl")
    b.write_jsonl(tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert np.array_equal(a.final_prices, b.final_prices)


def test_trace_export(tmp_path):
    tr = run_algorithm1(single())
    tr.write_jsonl(tmp_path / "t.jsonl")
    tr.write_summary(tmp_path / "s.json")
    first = json.loads((tmp_path / "t.jsonl").read_text().splitlines()[0])
    assert set(first) == {"round", "sender", "receiver", "kind", "period", "company", "value"}
    summary = json.loads((tmp_path / "s.json").read_text())
    assert {"outcome", "rounds", "final_prices", "max_residual"} <= set(summary)


def test_audit_catches_a_budget_payload():
    s = single()
    tr = run_algorithm1(s)
    assert privacy_audit(tr, s).passed
    m = tr.messages[0]
    tr.messages.replace(0, Message(m.round, m.sender, m.receiver, "budget", m.company, m.period, 10.0))
    rep = privacy_audit(tr, s)
    assert not rep.passed
    assert rep.offending[0][0] == 0


def test_audit_catches_leaked_state():
    s = single()
    tr = run_algorithm1(s)
    tr.company_states[0]["rival_capacity"] = [1.0]
    assert not privacy_audit(tr, s).passed
