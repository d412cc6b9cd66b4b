"""Adversarial inputs: poisoning lower-bound datasets and a tailored Byzantine attack.

Every construction splits the n workers into a pivot worker 0 that holds
the differing sample, a neutral group N of ``n - 2f - 1`` workers, and two
competing groups E and F of ``f`` workers each, laid out in that order.
"""

from dataclasses import dataclass, field
from math import sqrt
from typing import Optional

import numpy as np

from .aggregation import aggregate_smea
from .engine import NeighboringPair, WorkerSet
from .errors import AttackInfeasibleError, ConstructionError, ValidationError
from .losses import ProjectionDomain, huberized_regression, linear1d, quadratic_mean

BYZANTINE_TABLE_N15 = {
    1: (1,),
    2: (1, 2),
    3: (1, 2, 3),
    4: (1, 2, 3, 4),
    5: (1, 2, 3, 4, 5),
    6: (6, 7, 8, 9, 10, 11),
    7: (5, 6, 7, 8, 9, 10, 11),
}


@dataclass(frozen=True)
class ConstructionParams:
    n: int = 15
    f: int = 3
    m: int = 1
    C: float = 1.0
    L: float = 1.0
    mu: Optional[float] = None
    gamma: float = 1.0
    T: int = 5
    epsilon: Optional[float] = None
    psi_override: Optional[float] = None
    dim: int = 2

    def __post_init__(self):
        if not (0 <= self.f and 2 * self.f < self.n):
            raise ValidationError(f"need 0 <= f < n/2, got f={self.f}, n={self.n}")
        if self.n - 2 * self.f < 1 or self.m < 1 or self.T < 1:
            raise ValidationError("need n - 2f >= 1, m >= 1, T >= 1")
        if not (self.C > 0 and self.L > 0 and self.gamma > 0):
            raise ValidationError("C, L and gamma must be positive")

    @property
    def p(self):
        return (self.f + 1.0 / self.m) / (self.n - self.f)


@dataclass(frozen=True)
class ConstructionOutput:
    pair: NeighboringPair
    workers: WorkerSet
    loss: object
    groups: dict
    psi: float
    predicted: dict = field(default_factory=dict)


def construction_groups(n, f):
    pivot = (0,)
    N = tuple(range(1, n - 2 * f))
    E = tuple(range(n - 2 * f, n - f))
    F = tuple(range(n - f, n))
    return {"pivot": pivot, "N": N, "E": E, "F": F}


def _layout(params, pivot_row, pivot_variant_row, filler, values_by_group):
    """Assemble ``(n, m, p)`` base/variant arrays from per-group rows."""
    n, m = params.n, params.m
    groups = construction_groups(n, params.f)
    p = len(filler)
    base = np.empty((n, m, p))
    base[0] = filler
    base[0, 0] = pivot_row
    for name in ("N", "E", "F"):
        for i in groups[name]:
            base[i] = values_by_group[name]
    variant = base.copy()
    variant[0, 0] = pivot_variant_row
    return base, variant, groups


def _output(params, base, variant, groups, loss, psi, predicted):
    ids = tuple(range(params.n))
    pair = NeighboringPair(base=base, variant=variant, diff_location=(0, 0))
    workers = WorkerSet(n=params.n, honest_ids=ids, datasets=base)
    return ConstructionOutput(pair=pair, workers=workers, loss=loss, groups=groups, psi=psi, predicted=predicted)


def linear_psi(n, f, m):
    # negative radicand (e.g. n=15, f=7, m=1) is clamped to 0
    return sqrt(max(0.0, n - 2 * f - 2.0 / m) / (n - 2 * f + 2.0 / m))


def build_linear_lb(params):
    """Linear-loss GD construction on which SMEA flips between groups F and E."""
    n, f, C = params.n, params.f, params.C
    psi = linear_psi(n, f, params.m) if params.psi_override is None else float(params.psi_override)
    base, variant, groups = _layout(
        params, [-C], [0.0], [0.0],
        {"N": [0.0], "E": [(1 + psi) / 2 * C], "F": [-C]},
    )
    gct = params.gamma * C * params.T
    predicted = {
        "selected_base": tuple(sorted(groups["pivot"] + groups["N"] + groups["F"])),
        "selected_variant": tuple(sorted(groups["pivot"] + groups["N"] + groups["E"])),
        "theta_T": params.p * gct,
        "theta_T_variant": -(f / (n - f)) * (1 + psi) / 2 * gct,
    }
    return _output(params, base, variant, groups, linear1d(C=C, L=params.L), psi, predicted)


def strongcvx_psi_interval(n, f, m):
    lo_a = sqrt(max(0.0, n - 2 * (f + 1.0 / m)) / (n - 2 * (f - 1.0 / m)))
    lo_b = 1 - 4.0 / (m * (n - 2 * f))
    return max(lo_a, lo_b), 1.0


def build_strongcvx_lb(params):
    """Quadratic-loss GD construction on the ball of radius C/(2 mu)."""
    n, f, C = params.n, params.f, params.C
    mu = params.mu if params.mu is not None else params.L
    if not 0 < mu <= params.L:
        raise ConstructionError(f"need 0 < mu <= L, got mu={mu}, L={params.L}")
    lo, hi = strongcvx_psi_interval(n, f, params.m)
    if not lo < hi:
        raise ConstructionError(f"empty psi interval ({lo}, {hi})")
    if params.psi_override is None:
        psi = 0.5 * (lo + hi)
    else:
        psi = float(params.psi_override)
        if not lo < psi < hi:
            raise ConstructionError(f"psi={psi} outside the valid interval ({lo}, {hi})")
    r = C / (2 * mu)
    base, variant, groups = _layout(
        params, [r], [0.0], [0.0],
        {"N": [0.0], "E": [-(1 + psi) / 2 * r], "F": [r]},
    )
    decay = 1 - (1 - params.gamma * mu) ** params.T
    predicted = {
        "selected_base": tuple(sorted(groups["pivot"] + groups["N"] + groups["F"])),
        "selected_variant": tuple(sorted(groups["pivot"] + groups["N"] + groups["E"])),
        "theta_T": params.p * r * decay,
        "theta_T_variant": -(f / (n - f)) * (1 + psi) / 2 * r * decay,
        "psi_interval": (lo, hi),
    }
    loss = quadratic_mean(C=C, mu=mu, L=params.L)
    return _output(params, base, variant, groups, loss, psi, predicted)


def projected_expected_lambda(params, epsilon=None, t_final=None):
    """Exact ``E[lambda_T]`` of the base run in the projected-SGD construction.

    The variant run stays at the origin. The base run stays at 0 until the
    pivot first draws its special sample at some step s; with ``t0 = s + 1``
    it jumps to ``lambda_t0 = gamma beta (f+1)/(n-f)`` and afterwards
    ``E[lambda_t] = lam_star + (lambda_t0 - lam_star) (1 - a)^(t - t0)``
    with ``lam_star = beta/(L b^2)`` and ``a = p gamma L b^2``. The result
    mixes this over the geometric law of ``t0``.
    """
    n, f, m, L, gamma = params.n, params.f, params.m, params.L, params.gamma
    T = params.T if t_final is None else t_final
    beta = params.C / sqrt(L)
    b = 1.0 / sqrt(params.T)
    lam_t0 = gamma * beta * (f + 1) / (n - f)
    lam_star = beta / (L * b * b)
    a = params.p * gamma * L * b * b
    total = 0.0
    for t0 in range(1, T + 1):
        prob = (1 - 1.0 / m) ** (t0 - 1) / m
        total += prob * (lam_star + (lam_t0 - lam_star) * (1 - a) ** (T - t0))
    return total


def projected_epsilon_bound(params):
    n, f = params.n, params.f
    psi = (n - 2 * f - 2) / (n - 2 * f)
    return min(1 - psi, params.gamma * params.L * f / (n - f))


def build_projected_lb(params):
    """Huberized-regression projected-SGD construction on a ray."""
    n, f, C, L, T = params.n, params.f, params.C, params.L, params.T
    if n - 2 * f < 3:
        raise ConstructionError(f"need n - 2f >= 3, got n={n}, f={f}")
    psi = (n - 2 * f - 2) / (n - 2 * f)
    eps_max = projected_epsilon_bound(params)
    eps = 0.5 * eps_max if params.epsilon is None else float(params.epsilon)
    if not 0 < eps < eps_max:
        raise ConstructionError(f"need 0 < epsilon < {eps_max}, got {eps}")
    if params.dim < 1:
        raise ConstructionError("dim must be positive")
    v = np.zeros(params.dim)
    v[0] = sqrt(L)
    beta = C / sqrt(L)
    alpha = (1 - eps) * beta
    b = 1.0 / sqrt(T)
    zero = np.zeros(params.dim + 1)
    spike = np.append(b * v, beta / b)
    base, variant, groups = _layout(
        params, spike, zero, zero,
        {"N": zero, "E": np.append(v, -alpha), "F": spike},
    )
    loss = huberized_regression(C=C, L=L, domain=ProjectionDomain.ray(v))
    predicted = {
        "epsilon": eps,
        "alpha": alpha,
        "beta": beta,
        "b": b,
        "v": v,
        "expected_lambda_T": projected_expected_lambda(params, eps),
        "witness": np.append(v, -C / sqrt(L)),
    }
    return _output(params, base, variant, groups, loss, psi, predicted)


def conditional_lambda(params, t0, t):
    """``E[lambda_t | T0 = t0]`` for the projected construction (0 when t < t0)."""
    if t < t0:
        return 0.0
    n, f, L, gamma = params.n, params.f, params.L, params.gamma
    beta = params.C / sqrt(L)
    b = 1.0 / sqrt(params.T)
    lam_t0 = gamma * beta * (f + 1) / (n - f)
    lam_star = beta / (L * b * b)
    a = params.p * gamma * L * b * b
    return lam_star + (lam_t0 - lam_star) * (1 - a) ** (t - t0)


def byzantine_identity_table(n, f):
    """Byzantine worker ids (0-indexed); tabulated for n = 15, last f workers otherwise."""
    if not 0 <= f < n / 2:
        raise ValidationError(f"need 0 <= f < n/2, got f={f}, n={n}")
    if n == 15 and f in BYZANTINE_TABLE_N15:
        return BYZANTINE_TABLE_N15[f]
    return tuple(range(n - f, n))


class TailoredAttack:
    """Byzantine strategy that mimics poisoning at theta = 0, then pushes theta further out.

    For ``theta > 0`` every Byzantine worker sends ``inf{a : selected} + epsilon``;
    for ``theta < 0`` it sends ``sup{a : selected} - epsilon``, where ``selected``
    means SMEA keeps at least one Byzantine slot when all of them hold ``a``.
    """

    def __init__(self, n, f, byz_ids, poisoning_values, C=1.0, epsilon=1e-3,
                 bracket=10.0, grid_points=401, tol=1e-9, max_iter=200):
        if epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        self.n, self.f = int(n), int(f)
        self.byz_ids = tuple(int(i) for i in byz_ids)
        if len(self.byz_ids) != self.f or self.f < 1:
            raise ValidationError("need f >= 1 Byzantine ids")
        self.poisoning_values = np.asarray(poisoning_values, dtype=float).reshape(self.f, -1)
        self.C = float(C)
        self.epsilon = float(epsilon)
        self.bracket = float(bracket)
        self.grid_points = int(grid_points)
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.history = []

    def batch_with(self, honest_ids, honest_gradients, value):
        g = np.asarray(honest_gradients, dtype=float).reshape(len(honest_ids), -1)
        batch = np.empty((self.n, g.shape[1]))
        batch[list(honest_ids)] = g
        batch[list(self.byz_ids)] = value
        return batch

    def selects_byzantine(self, honest_ids, honest_gradients, value):
        out = aggregate_smea(self.batch_with(honest_ids, honest_gradients, value), self.f)
        return any(i in out.selected for i in self.byz_ids)

    def boundary(self, honest_ids, honest_gradients, side):
        """``inf`` (side=-1) or ``sup`` (side=+1) of the scalar values SMEA still selects."""
        g = np.asarray(honest_gradients, dtype=float).reshape(-1)
        K = self.bracket * (np.max(np.abs(g), initial=0.0) + self.C)
        grid = np.unique(np.concatenate([
            np.linspace(-K, K, self.grid_points), g, self.poisoning_values.reshape(-1),
        ]))
        grid = grid[(grid >= -K) & (grid <= K)]
        member = np.array([self.selects_byzantine(honest_ids, g, a) for a in grid])
        if not member.any():
            raise AttackInfeasibleError(f"no value in [{-K}, {K}] is selected by SMEA")
        hits = np.flatnonzero(member)
        if side < 0:
            k = hits[0]
            if k == 0:
                return float(grid[0])
            inside, outside = grid[k], grid[k - 1]
        else:
            k = hits[-1]
            if k == grid.size - 1:
                return float(grid[-1])
            inside, outside = grid[k], grid[k + 1]
        for _ in range(self.max_iter):
            if abs(inside - outside) <= self.tol:
                break
            mid = 0.5 * (inside + outside)
            if self.selects_byzantine(honest_ids, g, mid):
                inside = mid
            else:
                outside = mid
        return float(inside)

    def value(self, theta, honest_ids, honest_gradients):
        th = float(np.asarray(theta, dtype=float).reshape(-1)[0])
        if th == 0.0:
            return self.poisoning_values.copy()
        if th > 0:
            a = self.boundary(honest_ids, honest_gradients, -1) + self.epsilon
        else:
            a = self.boundary(honest_ids, honest_gradients, +1) - self.epsilon
        return np.full((self.f, 1), a)

    def __call__(self, t, theta, honest_ids, honest_gradients):
        sent = self.value(theta, honest_ids, honest_gradients)
        self.history.append((t, sent[:, 0].copy()))
        return sent


def tailored_byzantine_value(state, theta, honest_ids, honest_gradients):
    return state.value(theta, honest_ids, honest_gradients)


def build_tailored_attack(params, byz_ids=None, epsilon=1e-3):
    """Worker set for the linear construction with ``byz_ids`` replaced by the tailored attack.

    Returns ``(pair, workers, loss)`` where ``pair`` covers the honest workers only.
    """
    lin = build_linear_lb(params)
    byz = byzantine_identity_table(params.n, params.f) if byz_ids is None else tuple(byz_ids)
    if 0 in byz:
        raise ValidationError("the pivot worker 0 must stay honest")
    honest = tuple(i for i in range(params.n) if i not in byz)
    base = lin.pair.base[list(honest)]
    variant = lin.pair.variant[list(honest)]
    # gradient of the linear loss is the data value itself
    poison = lin.pair.base[list(byz), 0, :]
    attack = TailoredAttack(params.n, params.f, byz, poison, C=params.C, epsilon=epsilon)
    workers = WorkerSet(n=params.n, honest_ids=honest, datasets=base, byzantine_ids=byz, strategy=attack)
    pair = NeighboringPair(base=base, variant=variant, diff_location=(0, 0))
    return pair, workers, lin.loss
