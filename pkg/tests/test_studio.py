from __future__ import annotations

import json
import math

import numpy as np
import pytest

from demandgame.equilibrium import consumer_best_response, stackelberg_equilibrium
from demandgame.errors import CountMismatch, ParseError, ShareSumError, StageError, UnitError
from demandgame.studio.casestudy import (
    DATA_DIR,
    ExperimentSeries,
    billing_savings_report,
    derive_scenario_from_experiment,
    fixture_config,
    horizon_scenario,
    load_case_data,
    run_case_study,
)

ECOGRID = DATA_DIR / "ecogrid_2014-12-05.csv"
DUTCH = DATA_DIR / "dutch_pilot.csv"


def write_csv(path, header, rows):
    path.write_text(header + "\n" + "\n".join(",".join(str(v) for v in r) for r in rows) + "\n")
    return path


@pytest.fixture
def day(tmp_path):
    rows = [(h, 0.2 + 0.01 * h, 10 + h) for h in range(24)]
    return write_csv(tmp_path / "day.csv", "hour,price_dkk_per_kwh,load_kwh", rows)


def test_load_well_formed(day):
    s = load_case_data(day, population=5)
    assert s.periods == 24 and s.currency == "DKK"
    assert s.prices[3] == pytest.approx(0.23)


def test_load_negative_price_names_the_row(tmp_path):
    rows = [(h, -1 if h == 6 else 0.3, 10) for h in range(24)]
    path = write_csv(tmp_path / "bad.csv", "hour,price_dkk_per_kwh,load_kwh", rows)
    with pytest.raises(ParseError) as info:
        load_case_data(path, 5)
    assert info.value.line == 8


def test_load_converts_mwh(tmp_path):
    path = write_csv(tmp_path / "m.csv", "hour,price_dkk_per_mwh,load_mwh", [(0, 500, 2)])
    s = load_case_data(path, 1)
    assert s.prices[0] == pytest.approx(0.5)
    assert s.load[0] == pytest.approx(2000.0)


@pytest.mark.parametrize("header", ["hour,price_dkk,load_kwh", "hour,price_dkk_per_kwh,load"])
def test_load_undeclared_units(tmp_path, header):
    path = write_csv(tmp_path / "u.csv", header, [(0, 1, 1)])
    with pytest.raises(UnitError):
        load_case_data(path, 1)


def test_load_garbage_row(tmp_path):
    path = write_csv(tmp_path / "g.csv", "hour,price_eur_per_kwh,load_kwh", [(0, 1, 1), (1, "x", 1)])
    with pytest.raises(ParseError) as info:
        load_case_data(path, 1)
    assert info.value.line == 3


def test_ecogrid_parameters():
    series = load_case_data(ECOGRID, 2000)
    s = derive_scenario_from_experiment(series)
    assert s.consumers[0].energy_min == pytest.approx(27.0, rel=0.01)
    assert s.consumers[0].budget == pytest.approx(7.6, rel=0.15)


def test_dutch_parameters():
    s = derive_scenario_from_experiment(load_case_data(DUTCH, 77))
    assert s.consumers[0].energy_min == pytest.approx(8.8, rel=0.02)
    assert s.consumers[0].budget == pytest.approx(1.1, rel=0.15)


def test_share_and_count_checks():
    series = load_case_data(DUTCH, 77)
    with pytest.raises(ShareSumError):
        derive_scenario_from_experiment(series, [0.5, 0.4])
    with pytest.raises(CountMismatch):
        derive_scenario_from_experiment(series, [1.0], [{"count": 70, "budget": 1.0}])


def test_four_companies_and_budget_classes():
    series = load_case_data(ECOGRID, 2000)
    shares = [0.61, 0.27, 0.09, 0.03]
    classes = [{"count": 400, "budget": b} for b in (4, 5, 6, 7, 8)]
    s = derive_scenario_from_experiment(series, shares, classes)
    assert s.K == 4 and s.N == 2000
    G = s.capacity_matrix()
    np.testing.assert_allclose(G / G.sum(axis=0), np.array(shares)[:, None] * np.ones((1, 24)))
    assert sorted({c.budget for c in s.consumers}) == [4, 5, 6, 7, 8]


@pytest.mark.parametrize("path, N", [(ECOGRID, 2000), (DUTCH, 77)])
def test_round_trip_energy(path, N):
    series = load_case_data(path, N)
    s = derive_scenario_from_experiment(series)
    assert s.capacity_matrix().sum() == pytest.approx(series.load.sum(), rel=1e-12)
    out = stackelberg_equilibrium(s)
    assert not out.flags.regime_flagged
    assert out.demands.sum() == pytest.approx(series.load.sum(), rel=1e-9)


@pytest.mark.parametrize("path, N", [(ECOGRID, 2000), (DUTCH, 77)])
def test_minimum_budget_meets_energy_at_experimental_prices(path, N):
    series = load_case_data(path, N)
    s = derive_scenario_from_experiment(series)
    c = s.consumers[0]
    br = consumer_best_response(c, series.prices[None, :])
    assert br.total >= c.energy_min - 1e-9
    out = stackelberg_equilibrium(s)
    payments = np.einsum("nkt,kt->n", out.demands, out.prices)
    np.testing.assert_allclose(payments, s.budgets(), rtol=1e-9)


def test_savings_fixtures():
    for path, N, lo, hi in [(DUTCH, 77, 0.30, 1.0), (ECOGRID, 2000, 0.05, 0.35)]:
        series = load_case_data(path, N)
        s = derive_scenario_from_experiment(series)
        rep = billing_savings_report(series, stackelberg_equilibrium(s), s.aggregate_B)
        assert lo < rep.savings_fraction <= hi
        assert rep.game_billing == pytest.approx(s.aggregate_B, rel=1e-9)
        assert rep.game_energy == pytest.approx(rep.experimental_energy, rel=1e-9)
        assert rep.experimental_cumulative[-1] == pytest.approx(rep.experimental_billing)
        assert np.all(np.diff(rep.game_cumulative) > 0)


def test_savings_zero_when_regimes_coincide():
    series = load_case_data(DUTCH, 77)
    s = derive_scenario_from_experiment(series)
    out = stackelberg_equilibrium(s)
    mirror = ExperimentSeries(24, out.prices[0].copy(), out.demands.sum(axis=0)[0], "EUR", 77)
    assert billing_savings_report(mirror, out).savings_fraction == pytest.approx(0.0, abs=1e-12)


def test_savings_sign_follows_bill_comparison():
    rng = np.random.default_rng(0)
    for _ in range(20):
        series = ExperimentSeries(6, rng.uniform(0.1, 1, 6), rng.uniform(5, 50, 6), "EUR", 10)
        s = derive_scenario_from_experiment(series)
        out = stackelberg_equilibrium(s, check=False)
        if out.flags.regime_flagged:
            continue
        rep = billing_savings_report(series, out)
        if rep.experimental_billing > s.aggregate_B:
            assert rep.savings_fraction > 0


def test_horizon_scenario_uses_uniform_split():
    s = derive_scenario_from_experiment(load_case_data(ECOGRID, 2000), [0.5, 0.5])
    s3 = horizon_scenario(s, 3)
    assert s3.T == 3
    np.testing.assert_allclose(s3.capacity_matrix(), s.capacity_matrix().sum() / 6)


def test_market_sweep_utilities_increase(tmp_path):
    res = run_case_study(fixture_config("ecogrid_market"))
    assert res.sweep is not None
    by_class = {}
    for row in res.sweep:
        if row["company"] != "wind":
            continue
        for key, u in row.items():
            if key.startswith("utility_budget_") and not math.isnan(u):
                by_class.setdefault(key, []).append(u)
    assert set(by_class) == {f"utility_budget_{b}" for b in (4, 5, 6, 7, 8)}
    for series in by_class.values():
        assert np.all(np.diff(series) > 0)
    assert len(by_class["utility_budget_8"]) == 50
    assert res.trace.converged and res.trace.final_round <= 5


def test_bundle_is_deterministic(tmp_path):
    a = run_case_study(fixture_config("ecogrid"), tmp_path / "a")
    run_case_study(fixture_config("ecogrid"), tmp_path / "b")
    assert set(a.files) >= {"equilibrium.json", "savings.json", "series.csv", "trace.jsonl"}
    for name in a.files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    sav = json.loads((tmp_path / "a" / "savings.json").read_text())
    assert sav["game_price_variance"] < sav["experimental_price_variance"]


def test_stage_errors_name_the_stage(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": str(DUTCH), "population": 77, "companies": {"shares": [0.5]}}))
    with pytest.raises(StageError) as info:
        run_case_study(cfg)
    assert info.value.stage == "derive"
    assert isinstance(info.value.cause, ShareSumError)
    cfg.write_text(json.dumps({"data": "missing.csv", "population": 77}))
    with pytest.raises(StageError) as info:
        run_case_study(cfg)
    assert info.value.stage == "load"
