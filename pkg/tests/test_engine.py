import numpy as np
import pytest

from robust_agg_lab.aggregation import aggregate
from robust_agg_lab.engine import (
    NeighboringPair, RunConfig, WorkerSet, first_divergence_step, first_draw_step, monte_carlo_paired, run,
    run_many, run_paired, sample_index_table,
)
from robust_agg_lab.errors import ConfigurationError, ValidationError
from robust_agg_lab.losses import (
    ProjectionDomain, gradients, huberized_regression, linear1d, quadratic_mean, squared_regression,
)


def reference_loop(config, workers, loss):
    """Plain per-worker loop with the same sample table; independent of the vectorised engine."""
    theta = config.theta0.copy()
    idx = sample_index_table(config.seed, config.T, workers.n, workers.m)
    out = [theta.copy()]
    for t in range(config.T):
        batch = np.zeros((workers.n, theta.size))
        for k, w in enumerate(workers.honest_ids):
            if config.algorithm == "gd":
                g = np.mean([gradients(loss, theta, z) for z in workers.datasets[k]], axis=0)
            else:
                g = gradients(loss, theta, workers.datasets[k][idx[t, w]])
            batch[w] = g
        if workers.byzantine_ids:
            honest = batch[list(workers.honest_ids)]
            batch[list(workers.byzantine_ids)] = workers.strategy(t, theta.copy(), workers.honest_ids, honest)
        theta = theta - config.step_size(t) * aggregate(config.rule, batch, config.f).aggregate
        out.append(theta.copy())
    return np.array(out)


def quad_workers(seed, n=6, m=4):
    rng = np.random.default_rng(seed)
    data = rng.uniform(-0.5, 0.5, size=(n, m, 1))
    return WorkerSet(n=n, honest_ids=tuple(range(n)), datasets=data)


def test_gd_mean_quadratic_closed_form():
    # theta_{t+1} - zbar = (1 - gamma mu)(theta_t - zbar)
    ws = quad_workers(0)
    loss = quadratic_mean(C=1.0, mu=1.0)
    cfg = RunConfig(algorithm="gd", rule="mean", T=6, gamma=0.3, theta0=np.array([0.4]))
    traj = run(cfg, ws, loss)
    zbar = ws.datasets.mean()
    expect = zbar + (0.4 - zbar) * 0.7 ** np.arange(7)
    np.testing.assert_allclose(traj.thetas[:, 0], expect, atol=1e-14)


@pytest.mark.parametrize("algorithm,rule,f", [("gd", "smea", 1), ("sgd", "mean", 0), ("sgd", "cwtm", 2),
                                              ("sgd", "smea", 2)])
def test_engine_matches_reference_loop(algorithm, rule, f):
    ws = quad_workers(5, n=7)
    loss = quadratic_mean(C=1.0, mu=1.0)
    cfg = RunConfig(algorithm=algorithm, rule=rule, T=8, f=f, gamma=0.5, seed=11, theta0=np.array([0.2]))
    np.testing.assert_allclose(run(cfg, ws, loss).thetas, reference_loop(cfg, ws, loss), atol=1e-14)


def test_engine_matches_reference_with_byzantine_strategy():
    rng = np.random.default_rng(2)
    data = rng.uniform(-1, 1, size=(5, 3, 1))

    def strategy(t, theta, honest_ids, honest):
        return np.full((2, 1), honest.max() + 0.1 * (t + 1))

    ws = WorkerSet(n=7, honest_ids=(0, 1, 2, 4, 6), datasets=data, byzantine_ids=(3, 5), strategy=strategy)
    cfg = RunConfig(algorithm="sgd", rule="smea", T=6, f=2, gamma=0.7, seed=3)
    np.testing.assert_allclose(run(cfg, ws, linear1d()).thetas, reference_loop(cfg, ws, linear1d()), atol=1e-14)


def test_projected_sgd_stays_in_domain():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(6, 5, 2))
    x /= np.maximum(1.0, np.linalg.norm(x, axis=2, keepdims=True))
    data = np.concatenate([x, rng.normal(size=(6, 5, 1))], axis=2)
    loss = huberized_regression(C=1.0, L=1.0, domain=ProjectionDomain.ball(0.5))
    cfg = RunConfig(algorithm="projected_sgd", rule="cwtm", T=20, f=1, gamma=1.0, theta0=np.zeros(2), seed=0)
    traj = run(cfg, WorkerSet(6, tuple(range(6)), data), loss)
    assert np.all(np.linalg.norm(traj.thetas, axis=1) <= 0.5 + 1e-12)


def test_seeds_are_deterministic_and_distinct():
    ws = quad_workers(1)
    loss = quadratic_mean()
    cfg = RunConfig(algorithm="sgd", rule="mean", T=10, gamma=0.5, seed=7)
    a, b = run(cfg, ws, loss), run(cfg, ws, loss)
    np.testing.assert_array_equal(a.thetas, b.thetas)
    c = run(cfg.with_seed(8), ws, loss)
    assert not np.array_equal(a.indices, c.indices)
    np.testing.assert_array_equal(a.indices, np.random.default_rng(7).integers(0, 4, size=(10, 6)))


def test_run_many_equals_single_runs():
    ws = quad_workers(2)
    loss = quadratic_mean()
    cfg = RunConfig(algorithm="sgd", rule="smea", T=5, f=2, gamma=0.5)
    many = run_many(cfg, ws, loss, [3, 4, 5])
    for s, traj in zip([3, 4, 5], many):
        np.testing.assert_array_equal(traj.thetas, run(cfg.with_seed(s), ws, loss).thetas)


def test_monte_carlo_paired_seed_order():
    ws = quad_workers(3)
    base = ws.datasets
    variant = base.copy()
    variant[2, 1, 0] = 0.0
    pair = NeighboringPair(base, variant, (2, 1))
    cfg = RunConfig(algorithm="sgd", rule="mean", T=5, gamma=0.5, seed=10)
    pairs = monte_carlo_paired(cfg, pair, ws, quadratic_mean(), runs=7, chunk=3)
    assert len(pairs) == 7
    for i, (a, b) in enumerate(pairs):
        ref_a, ref_b = run_paired(cfg.with_seed(10 + i), pair, ws, quadratic_mean())
        np.testing.assert_array_equal(a.thetas, ref_a.thetas)
        np.testing.assert_array_equal(b.thetas, ref_b.thetas)


def test_coupling_divergence_starts_after_first_draw():
    ws = quad_workers(6, n=4, m=5)
    variant = ws.datasets.copy()
    variant[1, 3, 0] = 0.45
    pair = NeighboringPair(ws.datasets, variant, (1, 3))
    for seed in range(20):
        cfg = RunConfig(algorithm="sgd", rule="mean", T=10, gamma=0.5, seed=seed)
        a, b = run_paired(cfg, pair, ws, quadratic_mean())
        s = first_draw_step(a, 1, 3)
        assert first_divergence_step(a, b) == (None if s is None else s + 1)


def test_neighboring_pair_validation():
    base = np.zeros((3, 2, 1))
    two = base.copy()
    two[0, 0, 0] = two[1, 1, 0] = 0.1
    with pytest.raises(ValidationError):
        NeighboringPair(base, two, (0, 0))
    one = base.copy()
    one[2, 1, 0] = 0.3
    with pytest.raises(ValidationError):
        NeighboringPair(base, one, (0, 0))
    assert NeighboringPair(base, one, (2, 1)).diff_location == (2, 1)


def test_config_and_worker_errors():
    with pytest.raises(ConfigurationError):
        RunConfig(algorithm="adam")
    with pytest.raises(ConfigurationError):
        RunConfig(schedule="inverse", c=1.0)
    with pytest.raises(ConfigurationError):
        RunConfig(gamma=2.0, L=1.0, theorem_regime=True)
    assert RunConfig(schedule="inverse", c=2.0, L=4.0).step_size(1) == pytest.approx(0.25)
    with pytest.raises(ValidationError):
        WorkerSet(n=3, honest_ids=(0, 1), datasets=np.zeros((2, 1, 1)))
    ws = quad_workers(0)
    with pytest.raises(ConfigurationError):
        run(RunConfig(algorithm="projected_sgd", gamma=1.0), WorkerSet(2, (0, 1), np.zeros((2, 1, 3))),
            huberized_regression())
    with pytest.raises(ConfigurationError):
        run(RunConfig(gamma=1.0, theta0=np.zeros(2)), WorkerSet(2, (0, 1), np.zeros((2, 1, 3))),
            squared_regression())
    with pytest.raises(ConfigurationError):
        run(RunConfig(gamma=1.0), WorkerSet(3, (0, 1), np.zeros((2, 1, 1)), byzantine_ids=(2,)), linear1d())
    with pytest.raises(ValidationError):
        run(RunConfig(gamma=1.0), WorkerSet(6, tuple(range(6)), np.full((6, 4, 1), 2.0)), linear1d())
    assert ws.f == 0 and ws.m == 4
