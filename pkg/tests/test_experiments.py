import numpy as np
import pytest

from robust_agg_lab.errors import ConfigurationError, ValidationError
from robust_agg_lab.experiments import (
    FIGURE1_COLUMNS, as_array, byzantine_membership_audit, figure1, figure1_table, projected_stability_floor,
    run_scenario,
)
from robust_agg_lab.threats import ConstructionParams


@pytest.fixture(scope="module")
def cells():
    return figure1(range(0, 8))


def test_rows_have_all_columns(cells):
    for row in figure1_table(cells):
        assert list(row) == list(FIGURE1_COLUMNS) + ["status"]
        assert row["status"] == "ok"


def test_attack_free_row(cells):
    row = cells[0].row
    assert row["stab_pois"] == pytest.approx(1 / 3) == row["stab_byz"]
    assert row["kappa_theory"] == 0.0


def test_f3_row(cells):
    row = cells[3].row
    assert row["stab_pois"] == pytest.approx(2.7902441886775824, abs=1e-12)
    assert row["lb_pois"] == pytest.approx(5 / 3) and row["ub_pois"] == pytest.approx(10 / 3)


def test_byzantine_dominates_and_audit(cells):
    assert np.all(as_array(cells, "stab_byz") >= as_array(cells, "stab_pois"))
    assert all(byzantine_membership_audit(c) for c in cells)
    assert np.all(as_array(cells, "gen_err_byz") >= as_array(cells, "gen_err_pois"))


def test_f_range_validation():
    with pytest.raises(ValidationError):
        figure1([])
    with pytest.raises(ValidationError):
        figure1([8])


def test_scenarios():
    base = run_scenario("baseline", ConstructionParams(f=0))
    assert base["measured_stability"] == pytest.approx(1 / 3)
    assert base["measured_stability"] <= base["classic_bound"]
    sc = run_scenario("strongcvx", ConstructionParams(f=2, mu=1.0))
    assert sc["theta_T"] == pytest.approx(sc["predicted_theta_T"], abs=1e-12)
    with pytest.raises(ConfigurationError):
        run_scenario("baseline", ConstructionParams(f=1))
    with pytest.raises(ConfigurationError):
        run_scenario("tailored", ConstructionParams(f=0))
    with pytest.raises(ConfigurationError):
        run_scenario("bogus", ConstructionParams())


def test_projected_floor_value():
    p = ConstructionParams(n=15, f=3, m=4, T=16)
    assert projected_stability_floor(p) == pytest.approx(0.5 * (1 - (1 - np.exp(-4)) / 4) * (3.25 / 12) * 16)
