from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest

from demandgame.asymptotics import (
    SymmetricMarket,
    min_company_ratio,
    symmetric_price,
    sweep_periods,
    sweep_population,
)
from demandgame.equilibrium import equilibrium_prices_closed_form, stackelberg_equilibrium
from demandgame.errors import AsymmetricScenario, NonPositiveInput
from demandgame.model import Company, Consumer, Scenario


def tenth_share(K=1):
    # consumer 0 holds a tenth of the budget
    return SymmetricMarket(K, 10.0, (1.0,) * 10)


def test_period_sweep_values():
    r = sweep_periods(tenth_share(), [1, 2])
    u = r.column("user_utility")
    assert u[0] == pytest.approx(math.log(2))
    assert u[1] == pytest.approx(2 * math.log(1.5))
    assert r.limit_values["utility"] == pytest.approx(1.0)


def test_price_does_not_depend_on_horizon():
    r = sweep_periods(SymmetricMarket(1, 5.0, (10.0,)), [1, 3, 7, 50])
    np.testing.assert_allclose(r.column("price"), 2.0)


def test_period_sweep_properties():
    base = SymmetricMarket(3, 40.0, (1.0, 2.0, 5.0, 2.0), consumer=1)
    r = sweep_periods(base, range(1, 513))
    u = r.column("user_utility")
    assert np.all(np.diff(u) > 0)
    assert np.all(np.diff(np.abs(u - r.limit_values["utility"])) < 0)
    np.testing.assert_allclose(r.column("company_revenue"), 10.0 / 3, rtol=1e-12)
    T = r.column("axis_value")
    # energy per company over the horizon does not depend on T
    np.testing.assert_allclose(r.column("demand_per_cell") * T, 40.0 * 2 / 10, rtol=1e-12)
    assert len(r.crosschecked) == 512


def test_crosscheck_agrees_with_general_module():
    base = SymmetricMarket(2, 12.0, (3.0, 1.0))
    r = sweep_periods(base, [4])
    out = stackelberg_equilibrium(base.scenario(4))
    assert out.prices[0, 0] == pytest.approx(r.points[0].price, rel=1e-12)
    assert out.revenues[0] == pytest.approx(r.points[0].company_revenue, rel=1e-12)


def test_population_sweep_values():
    r = sweep_population(1.0, 1, 1, 10.0, [10, 100])
    np.testing.assert_allclose(r.column("price"), [1.0, 10.0])
    np.testing.assert_allclose(r.column("demand_per_cell"), [1.0, 0.1])


def test_population_of_one_is_the_single_consumer_case():
    r = sweep_population(10.0, 1, 1, 5.0, [1])
    assert r.points[0].price == pytest.approx(2.0)


def test_population_utility_declines():
    r = sweep_population(1.0, 2, 3, 10.0, [10, 100, 1000])
    u = r.column("user_utility")
    assert u[-1] < u[0]
    assert np.all(np.diff(u) < 0)


def test_large_population_skips_concrete_crosscheck():
    r = sweep_population(1.0, 1, 1, 10.0, [10, 1_000_000])
    assert r.crosschecked == (10,)


def test_asymmetric_inputs():
    s = Scenario(
        (Consumer("a", 1.0),),
        (Company("k1", (1.0,)), Company("k2", (2.0,))),
        1,
    )
    with pytest.raises(AsymmetricScenario):
        SymmetricMarket.from_scenario(s)
    with pytest.raises(AsymmetricScenario):
        sweep_population(-1.0, 1, 1, 1.0, [1])


def test_from_scenario():
    s = Scenario((Consumer("a", 1.0), Consumer("b", 3.0)), (Company("k", (2.0, 2.0)),), 2)
    m = SymmetricMarket.from_scenario(s)
    assert m.total_capacity == 4.0 and m.budgets == (1.0, 3.0)


@pytest.mark.parametrize("ratio_factor, above", [(1.0, False), (0.5, True), (2.0, False)])
def test_company_ratio_contract(ratio_factor, above):
    B, p_max, T, G = 8.0, 2.0, 1, 4.0
    ratio = min_company_ratio(B, p_max, T, G)
    assert ratio == 1.0
    N = 4
    K = int(ratio_factor * N * ratio)
    s = SymmetricMarket(K, G * T, (B,) * N).scenario(T)
    p = equilibrium_prices_closed_form(s)
    if above:
        assert np.all(p > p_max)
    else:
        assert np.all(p <= p_max * (1 + 1e-12))
        out = stackelberg_equilibrium(s)
        assert out.total_revenue == pytest.approx(N * B, rel=1e-12)
    assert p[0, 0] == pytest.approx(symmetric_price(B, N, K, T, G), rel=1e-12)


def test_company_ratio_inputs():
    with pytest.raises(NonPositiveInput):
        min_company_ratio(0.0, 1.0, 1, 1.0)


def test_exports(tmp_path):
    r = sweep_periods(tenth_share(), [1, 2, 3])
    r.write_csv(tmp_path / "s.csv")
    r.write_limits(tmp_path / "l.json")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["axis_value", "price", "demand_per_cell", "user_utility", "company_revenue"]
    assert len(rows) == 4
    assert json.loads((tmp_path / "l.json").read_text())["axis"] == "periods"
