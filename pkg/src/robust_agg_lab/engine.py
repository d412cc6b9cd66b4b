"""Distributed GD / SGD / projected SGD with a pluggable aggregation rule.

Honest workers hold local datasets stacked into one ``(h, m, p)`` array
(see :mod:`robust_agg_lab.losses` for the row layout). Byzantine workers
are driven by a strategy callable::

    strategy(t, theta, honest_ids, honest_gradients) -> (f, d) array

whose rows are sent by ``byzantine_ids`` in order.

SGD sample indices come from a table drawn once per run from
``numpy.random.default_rng(seed)`` with shape ``(T, n)``; entry ``[t, w]``
is the index used by worker ``w`` at step ``t``. The table depends only on
``(seed, T, n, m)``, so two runs with the same seed see the same draws.
"""

import copy
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .aggregation import RULES, aggregate_many
from .errors import ConfigurationError, ValidationError
from .losses import as_points, gradients, project, validate_points

ALGORITHMS = ("gd", "sgd", "projected_sgd")
SCHEDULES = ("constant", "inverse")
DIVERGENCE_TOL = 1e-12


@dataclass(frozen=True)
class WorkerSet:
    n: int
    honest_ids: tuple
    datasets: np.ndarray
    byzantine_ids: tuple = ()
    strategy: Optional[Callable] = None

    def __post_init__(self):
        hid = tuple(int(i) for i in self.honest_ids)
        bid = tuple(int(i) for i in self.byzantine_ids)
        data = np.asarray(self.datasets, dtype=float)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[0] != len(hid) or data.shape[1] == 0:
            raise ValidationError(
                f"datasets must have shape (honest workers, m, p); got {data.shape} for {len(hid)} honest ids"
            )
        ids = hid + bid
        if sorted(ids) != list(range(self.n)):
            raise ValidationError(f"honest and Byzantine ids must partition range({self.n})")
        if 2 * len(bid) >= self.n:
            raise ValidationError(f"need f < n/2 Byzantine workers, got f={len(bid)}, n={self.n}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("datasets contain non-finite values")
        data.flags.writeable = False
        object.__setattr__(self, "honest_ids", hid)
        object.__setattr__(self, "byzantine_ids", bid)
        object.__setattr__(self, "datasets", data)

    @classmethod
    def from_lists(cls, honest, byzantine_ids=(), strategy=None):
        """Build from ``[(worker_id, dataset), ...]`` pairs."""
        honest = sorted(honest, key=lambda item: item[0])
        ids = [int(i) for i, _ in honest]
        data = np.stack([np.asarray(ds, dtype=float) for _, ds in honest])
        n = len(ids) + len(tuple(byzantine_ids))
        return cls(n=n, honest_ids=tuple(ids), datasets=data,
                   byzantine_ids=tuple(byzantine_ids), strategy=strategy)

    @property
    def f(self):
        return len(self.byzantine_ids)

    @property
    def m(self):
        return self.datasets.shape[1]

    def with_datasets(self, datasets):
        return WorkerSet(self.n, self.honest_ids, datasets, self.byzantine_ids, self.strategy)


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "gd"
    rule: str = "mean"
    T: int = 1
    f: int = 0
    gamma: Optional[float] = None
    schedule: str = "constant"
    c: Optional[float] = None
    L: Optional[float] = None
    theta0: np.ndarray = field(default_factory=lambda: np.zeros(1))
    seed: int = 0
    mc_runs: int = 1
    theorem_regime: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.rule not in RULES:
            raise ConfigurationError(f"rule must be one of {RULES}, got {self.rule!r}")
        if not (isinstance(self.T, (int, np.integer)) and self.T >= 1):
            raise ConfigurationError(f"T must be a positive integer, got {self.T}")
        if self.f < 0:
            raise ConfigurationError(f"f must be non-negative, got {self.f}")
        if self.schedule == "constant":
            if self.gamma is None or not self.gamma > 0:
                raise ConfigurationError("constant schedule needs gamma > 0")
            if self.theorem_regime and self.L is not None and self.gamma > 1.0 / self.L:
                raise ConfigurationError(f"theorem regime needs gamma <= 1/L, got gamma={self.gamma}, L={self.L}")
        elif self.schedule == "inverse":
            if self.c is None or self.L is None or not (self.c > 0 and self.L > 0):
                raise ConfigurationError("inverse schedule needs c > 0 and L > 0")
        else:
            raise ConfigurationError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.mc_runs < 1:
            raise ConfigurationError("mc_runs must be positive")
        th = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        if th.ndim != 1 or not np.all(np.isfinite(th)):
            raise ConfigurationError("theta0 must be a finite vector")
        object.__setattr__(self, "theta0", th)

    def step_size(self, t):
        if self.schedule == "constant":
            return float(self.gamma)
        return float(self.c / (self.L * (t + 1)))

    def with_seed(self, seed):
        return RunConfig(**{**self.__dict__, "seed": int(seed)})


@dataclass(frozen=True)
class Trajectory:
    """Record of one run. ``batches[t]`` is the ``(n, d)`` input to the rule at step t."""

    thetas: np.ndarray
    batches: np.ndarray
    honest_ids: tuple
    byzantine_ids: tuple
    f: int
    rule: str
    selected: Optional[np.ndarray] = None
    indices: Optional[np.ndarray] = None

    @property
    def T(self):
        return self.batches.shape[0]

    @property
    def n(self):
        return self.batches.shape[1]

    @property
    def honest_gradients(self):
        return [[(i, self.batches[t, i]) for i in self.honest_ids] for t in range(self.T)]

    @property
    def byzantine_values(self):
        return [[(i, self.batches[t, i]) for i in self.byzantine_ids] for t in range(self.T)]

    @property
    def selected_subsets(self):
        if self.selected is None:
            return [None] * self.T
        return [tuple(int(i) for i in row) for row in self.selected]

    @property
    def sample_indices(self):
        """Per step, ``[(worker id, sample index), ...]`` for honest workers (SGD only)."""
        if self.indices is None:
            return None
        return [[(i, int(self.indices[t, i])) for i in self.honest_ids] for t in range(self.T)]


@dataclass(frozen=True)
class NeighboringPair:
    base: np.ndarray
    variant: np.ndarray
    diff_location: tuple

    def __post_init__(self):
        a = np.asarray(self.base, dtype=float)
        b = np.asarray(self.variant, dtype=float)
        if a.shape != b.shape or a.ndim != 3:
            raise ValidationError(f"base and variant must share an (h, m, p) shape, got {a.shape} vs {b.shape}")
        rows = np.argwhere(np.any(a != b, axis=2))
        if len(rows) > 1:
            raise ValidationError(f"datasets differ in {len(rows)} samples; neighbours differ in at most one")
        loc = tuple(int(i) for i in self.diff_location)
        if len(rows) == 1 and tuple(int(i) for i in rows[0]) != loc:
            raise ValidationError(f"datasets differ at {tuple(rows[0])}, not at diff_location {loc}")
        object.__setattr__(self, "base", a)
        object.__setattr__(self, "variant", b)
        object.__setattr__(self, "diff_location", loc)


def sample_index_table(seed, T, n, m):
    return np.random.default_rng(seed).integers(0, m, size=(T, n))


def _check(config, workers, loss):
    if workers.byzantine_ids and workers.strategy is None:
        raise ConfigurationError("Byzantine workers present but no strategy was given")
    if config.rule != "mean" and 2 * config.f >= workers.n:
        raise ConfigurationError(f"need f < n/2 for the rule, got f={config.f}, n={workers.n}")
    if config.f < workers.f:
        raise ConfigurationError(f"rule parameter f={config.f} is below the Byzantine count {workers.f}")
    if config.algorithm == "projected_sgd" and loss.domain is None:
        raise ConfigurationError("projected_sgd needs a loss with a projection domain")
    if not loss.lipschitz:
        raise ConfigurationError(f"{loss.family} is not globally Lipschitz and is not accepted by the engine")
    validate_points(loss, workers.datasets)


def _run_core(config, workers, loss, seeds):
    """Run one copy of the loop per seed, vectorised across seeds."""
    _check(config, workers, loss)
    R = len(seeds)
    if workers.byzantine_ids and R != 1:
        raise ConfigurationError("Byzantine strategies carry state; run them one seed at a time")
    n, T = workers.n, config.T
    hid = np.array(workers.honest_ids, dtype=np.intp)
    bid = np.array(workers.byzantine_ids, dtype=np.intp)
    data = as_points(loss, workers.datasets)
    h, m = data.shape[0], data.shape[1]
    d = config.theta0.size
    theta = np.tile(config.theta0, (R, 1))
    stochastic = config.algorithm != "gd"
    idx = np.stack([sample_index_table(s, T, n, m) for s in seeds]) if stochastic else None
    thetas = np.empty((R, T + 1, d))
    thetas[:, 0] = theta
    batches = np.empty((R, T, n, d))
    selected = np.empty((R, T, n - config.f), dtype=np.intp) if config.rule == "smea" else None
    rows = np.arange(h)
    for t in range(T):
        if stochastic:
            pts = data[rows[None, :], idx[:, t, hid]]  # (R, h, p)
            honest = gradients(loss, theta[:, None, :], pts)
        else:
            honest = gradients(loss, theta[:, None, None, :], data[None]).mean(axis=2)
        batch = np.empty((R, n, d))
        batch[:, hid] = honest
        if bid.size:
            sent = workers.strategy(t, theta[0].copy(), workers.honest_ids, honest[0].copy())
            batch[0, bid] = np.asarray(sent, dtype=float).reshape(bid.size, d)
        agg, sel = aggregate_many(config.rule, batch, config.f)
        theta = theta - config.step_size(t) * agg
        if config.algorithm == "projected_sgd":
            theta = project(loss.domain, theta)
        thetas[:, t + 1] = theta
        batches[:, t] = batch
        if selected is not None:
            selected[:, t] = sel
    return [
        Trajectory(
            thetas=thetas[r],
            batches=batches[r],
            honest_ids=workers.honest_ids,
            byzantine_ids=workers.byzantine_ids,
            f=config.f,
            rule=config.rule,
            selected=None if selected is None else selected[r],
            indices=None if idx is None else idx[r],
        )
        for r in range(R)
    ]


def run(config, workers, loss):
    """Execute one run and return its :class:`Trajectory`."""
    return _run_core(config, workers, loss, [config.seed])[0]


def run_many(config, workers, loss, seeds):
    """Independent runs for each seed in ``seeds`` (no Byzantine workers), in seed order."""
    return _run_core(config, workers, loss, [int(s) for s in seeds])


def run_paired(config, pair, workers_template, loss):
    """Run base and variant datasets with identical seeds and independent strategy copies."""
    base = workers_template.with_datasets(pair.base)
    variant = workers_template.with_datasets(pair.variant)
    if workers_template.strategy is not None:
        # each run owns its strategy state
        base = WorkerSet(base.n, base.honest_ids, base.datasets, base.byzantine_ids,
                         copy.deepcopy(workers_template.strategy))
        variant = WorkerSet(variant.n, variant.honest_ids, variant.datasets, variant.byzantine_ids,
                            copy.deepcopy(workers_template.strategy))
    return run(config, base, loss), run(config, variant, loss)


def first_divergence_step(t1, t2):
    if t1.thetas.shape != t2.thetas.shape:
        raise ValidationError("trajectories must have equal length and dimension")
    gaps = np.linalg.norm(t1.thetas - t2.thetas, axis=1)
    hits = np.flatnonzero(gaps > DIVERGENCE_TOL)
    return int(hits[0]) if hits.size else None


def first_draw_step(trajectory, worker_id, sample_index):
    """First step at which ``worker_id`` draws ``sample_index``, or None."""
    if trajectory.indices is None:
        return None
    hits = np.flatnonzero(trajectory.indices[:, worker_id] == sample_index)
    return int(hits[0]) if hits.size else None


def monte_carlo_paired(config, pair, workers_template, loss, runs=None, chunk=500):
    """Paired runs over seeds ``config.seed + i`` for ``i < runs``, as a list in seed order."""
    runs = config.mc_runs if runs is None else runs
    seeds = [config.seed + i for i in range(runs)]
    if workers_template.strategy is not None:
        return [run_paired(config.with_seed(s), pair, workers_template, loss) for s in seeds]
    base = workers_template.with_datasets(pair.base)
    variant = workers_template.with_datasets(pair.variant)
    out = []
    for k in range(0, runs, chunk):
        block = seeds[k:k + chunk]
        out.extend(zip(run_many(config, base, loss, block), run_many(config, variant, loss, block)))
    return out
