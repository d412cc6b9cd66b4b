from math import exp, sqrt

import numpy as np
import pytest

from robust_agg_lab.aggregation import aggregate_smea
from robust_agg_lab.analysis import measure_stability
from robust_agg_lab.engine import RunConfig, monte_carlo_paired, run_paired
from robust_agg_lab.errors import ConstructionError, ValidationError
from robust_agg_lab.threats import (
    BYZANTINE_TABLE_N15, ConstructionParams, TailoredAttack, build_linear_lb, build_projected_lb,
    build_strongcvx_lb, build_tailored_attack, byzantine_identity_table, conditional_lambda, construction_groups,
    linear_psi, projected_epsilon_bound, projected_expected_lambda, strongcvx_psi_interval,
)

GD = dict(algorithm="gd", rule="smea", gamma=1.0)


def gd_config(f, T=5):
    return RunConfig(T=T, f=f, **GD)


def test_groups_partition_workers():
    for f in range(8):
        g = construction_groups(15, f)
        ids = sorted(g["pivot"] + g["N"] + g["E"] + g["F"])
        assert ids == list(range(15))
        assert len(g["N"]) == 15 - 2 * f - 1 and len(g["E"]) == len(g["F"]) == f


def test_linear_psi_values():
    assert linear_psi(15, 3, 1) == pytest.approx(sqrt(7 / 11))
    # radicand n - 2f - 2/m is negative at f = 7, m = 1
    assert linear_psi(15, 7, 1) == 0.0
    assert 0 < linear_psi(15, 7, 4) < 1


@pytest.mark.parametrize("f", range(0, 8))
def test_linear_construction_closed_form(f):
    p = ConstructionParams(n=15, f=f, m=1, C=1.0, gamma=1.0, T=5)
    out = build_linear_lb(p)
    a, b = run_paired(gd_config(f), out.pair, out.workers, out.loss)
    assert a.thetas[-1, 0] == pytest.approx(5 * (f + 1) / (15 - f), abs=1e-12)
    assert b.thetas[-1, 0] == pytest.approx(-5 * f / (15 - f) * (1 + out.psi) / 2, abs=1e-12)
    if f:
        assert all(s == out.predicted["selected_base"] for s in a.selected_subsets)
        assert all(s == out.predicted["selected_variant"] for s in b.selected_subsets)


def test_linear_construction_at_f3():
    out = build_linear_lb(ConstructionParams(f=3))
    runs = run_paired(gd_config(3), out.pair, out.workers, out.loss)
    assert measure_stability(runs, out.loss) == pytest.approx(2.7902441886775824, abs=1e-12)
    assert out.groups["F"] == (12, 13, 14)


def test_strongcvx_psi_interval_and_errors():
    lo, hi = strongcvx_psi_interval(15, 3, 1)
    assert lo == pytest.approx(max(sqrt(7 / 11), 1 - 4 / 9)) and hi == 1.0
    with pytest.raises(ConstructionError):
        build_strongcvx_lb(ConstructionParams(f=3, mu=1.0, psi_override=0.1))
    with pytest.raises(ValidationError):
        ConstructionParams(f=8)


@pytest.mark.parametrize("f", range(1, 7))
def test_strongcvx_construction(f):
    p = ConstructionParams(n=15, f=f, m=1, C=1.0, L=1.0, mu=1.0, gamma=1.0, T=5)
    out = build_strongcvx_lb(p)
    a, b = run_paired(gd_config(f), out.pair, out.workers, out.loss)
    # gamma mu = 1: the first step lands on the fixed point
    assert a.thetas[-1, 0] == pytest.approx(p.p / 2, abs=1e-12)
    assert all(s == out.predicted["selected_base"] for s in a.selected_subsets)
    stab = measure_stability((a, b), out.loss)
    assert p.C * a.thetas[-1, 0] / 2 <= stab <= 2 * p.p


def test_projected_epsilon_and_expected_lambda():
    p = ConstructionParams(n=15, f=3, m=4, T=16)
    psi = 7 / 9
    assert projected_epsilon_bound(p) == pytest.approx(min(1 - psi, 3 / 12))
    # the mixture over the first-draw step, summed independently
    beta, b2 = 1.0, 1 / 16
    lam0, lam_star, a = 4 / 12, beta / b2, p.p * b2
    mix = sum((3 / 4) ** (t0 - 1) / 4 * (lam_star + (lam0 - lam_star) * (1 - a) ** (16 - t0)) for t0 in range(1, 17))
    assert projected_expected_lambda(p) == pytest.approx(mix, rel=1e-14)
    assert projected_expected_lambda(p) == pytest.approx(3.220243107569158, rel=1e-12)
    assert conditional_lambda(p, 5, 4) == 0.0
    assert conditional_lambda(p, 5, 5) == pytest.approx(lam0)
    with pytest.raises(ConstructionError):
        build_projected_lb(ConstructionParams(n=15, f=7, m=4, T=16))
    with pytest.raises(ConstructionError):
        build_projected_lb(ConstructionParams(n=15, f=3, m=4, T=16, epsilon=0.5))


def test_projected_construction_small_monte_carlo():
    p = ConstructionParams(n=15, f=3, m=4, T=16)
    out = build_projected_lb(p)
    cfg = RunConfig(algorithm="projected_sgd", rule="smea", T=16, f=3, gamma=1.0, theta0=np.zeros(2))
    pairs = monte_carlo_paired(cfg, out.pair, out.workers, out.loss, runs=1500)
    lam = np.array([a.thetas[-1, 0] for a, _ in pairs]) / sqrt(p.L)
    se = lam.std(ddof=1) / sqrt(lam.size)
    assert abs(lam.mean() - out.predicted["expected_lambda_T"]) < 4 * se
    assert all(np.all(b.thetas == 0.0) for _, b in pairs)
    floor = 0.5 * (1 - (1 - exp(-4)) / 4) * p.p * p.T
    assert measure_stability(pairs, out.loss, z_grid=[out.predicted["witness"]]) >= floor


def test_byzantine_identity_table():
    assert byzantine_identity_table(15, 3) == (1, 2, 3)
    assert byzantine_identity_table(15, 7) == BYZANTINE_TABLE_N15[7]
    assert byzantine_identity_table(9, 2) == (7, 8)
    for f, ids in BYZANTINE_TABLE_N15.items():
        assert len(ids) == f and 0 not in ids


def test_tailored_boundary_is_tight():
    rng = np.random.default_rng(0)
    honest = rng.uniform(-1, 1, size=(11, 1))
    hid = tuple(range(11))
    att = TailoredAttack(15, 4, (11, 12, 13, 14), np.zeros((4, 1)), tol=1e-10)
    for side in (-1, +1):
        edge = att.boundary(hid, honest, side)
        assert att.selects_byzantine(hid, honest, edge)
        assert not att.selects_byzantine(hid, honest, edge + side * 1e-6)


def test_tailored_attack_mimics_poisoning_at_zero():
    p = ConstructionParams(f=3)
    pair, workers, loss = build_tailored_attack(p)
    sent = workers.strategy(0, np.zeros(1), workers.honest_ids, pair.base[:, 0, :])
    np.testing.assert_array_equal(sent, build_linear_lb(p).pair.base[[1, 2, 3], 0, :])
    assert len(workers.strategy.history) == 1


@pytest.mark.parametrize("f", [1, 4, 7])
def test_tailored_attack_beats_poisoning(f):
    p = ConstructionParams(f=f)
    lin = build_linear_lb(p)
    pois = measure_stability(run_paired(gd_config(f), lin.pair, lin.workers, lin.loss), lin.loss)
    pair, workers, loss = build_tailored_attack(p)
    runs = run_paired(gd_config(f), pair, workers, loss)
    assert measure_stability(runs, loss) >= pois
    # the Byzantine slots are used whenever theta is away from zero
    for traj in runs:
        for t in range(traj.T):
            if traj.thetas[t, 0] != 0.0:
                assert set(traj.byzantine_ids) & set(traj.selected_subsets[t])


def test_tailored_attack_rejects_pivot():
    with pytest.raises(ValidationError):
        build_tailored_attack(ConstructionParams(f=2), byz_ids=(0, 1))
    with pytest.raises(ValidationError):
        TailoredAttack(15, 2, (1, 2), np.zeros(2), epsilon=0.0)


def test_smea_pick_on_linear_base_batch():
    out = build_linear_lb(ConstructionParams(f=2))
    batch = out.pair.base[:, 0, :]
    assert aggregate_smea(batch, 2).selected == out.predicted["selected_base"]
