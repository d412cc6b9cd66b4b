"""Stability measurement, empirical robustness coefficients and bound calculators."""

from dataclasses import dataclass
from math import sqrt
from typing import Optional

import numpy as np

from .aggregation import aggregate, trimmed_mean
from .errors import ConfigurationError, CounterexampleNotFoundError, PropertyViolation, ValidationError
from .linalg import as_vectors, covariance_stats, max_eigenvalue_sym, scan_subsets
from .losses import gradients, values

ZERO_VAR_TOL = 1e-12


@dataclass(frozen=True)
class StabilityReport:
    attack: str
    f: int
    measured_stability: float
    ub_theoretical: float
    kappa_hat_base: float
    kappa_hat_variant: float
    stderr: Optional[float] = None
    lb_theoretical: Optional[float] = None
    ub_empirical_kappa: Optional[float] = None
    gen_error: Optional[float] = None

    def __post_init__(self):
        if self.measured_stability < 0 or self.kappa_hat_base < 0 or self.kappa_hat_variant < 0:
            raise ValidationError("stability and kappa estimates must be non-negative")


def _final_pairs(pairs):
    if isinstance(pairs, tuple) and len(pairs) == 2 and hasattr(pairs[0], "thetas"):
        pairs = [pairs]
    base = np.array([p[0].thetas[-1] for p in pairs])
    variant = np.array([p[1].thetas[-1] for p in pairs])
    return base, variant


def measure_stability(pairs, loss, z_grid=None):
    """``sup_z |E[loss(theta_T; z) - loss(theta'_T; z)]|`` over paired runs.

    ``pairs`` is one ``(trajectory, trajectory)`` tuple or a list of them
    (Monte-Carlo runs). The linear and quadratic losses use their closed
    forms; other families need ``z_grid``.
    """
    base, variant = _final_pairs(pairs)
    if loss.family == "linear1d":
        return float(loss.C * abs(np.mean(base[:, 0] - variant[:, 0])))
    if z_grid is None:
        if loss.family != "quadratic_mean":
            raise ConfigurationError(f"{loss.family} needs an explicit z grid for the sup over z")
        # loss difference is affine in z, so the sup sits at an endpoint
        z_grid = np.array([[-loss.C / (2 * loss.mu)], [loss.C / (2 * loss.mu)]])
    grid = np.asarray(z_grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    diffs = np.array([values(loss, b, grid) - values(loss, v, grid) for b, v in zip(base, variant)])
    return float(np.max(np.abs(diffs.mean(axis=0))))


def stability_samples(pairs, loss, z):
    """Per-run loss differences at a fixed witness ``z`` (for standard errors)."""
    base, variant = _final_pairs(pairs)
    z = np.asarray(z, dtype=float)
    return np.array([float(values(loss, b, z) - values(loss, v, z)) for b, v in zip(base, variant)])


def kappa_ratios(batch, f, aggregate_value):
    """Per-subset ratio ``|F - mean_S|^2 / lambda_max(Sigma_S)`` with the zero-variance convention."""
    g = as_vectors(batch)
    scan = scan_subsets(g, g.shape[0] - f)
    num = np.sum((scan.means - np.asarray(aggregate_value, dtype=float).reshape(-1)) ** 2, axis=1)
    den = np.maximum(scan.lambda_max, 0.0)
    zero = den < ZERO_VAR_TOL
    ratio = np.empty_like(num)
    ratio[~zero] = num[~zero] / den[~zero]
    ratio[zero] = np.where(num[zero] < ZERO_VAR_TOL, 0.0, np.inf)
    return ratio, scan


def empirical_kappa(trajectory):
    """Largest observed robustness ratio along a trajectory of SMEA steps.

    In one dimension the denominator is the subset variance; in higher
    dimension it is the top eigenvalue of the subset covariance.
    """
    if trajectory.selected is None:
        raise ValidationError("empirical_kappa needs a trajectory with SMEA selections")
    worst = 0.0
    for t in range(trajectory.T):
        batch = trajectory.batches[t]
        agg = batch[trajectory.selected[t]].mean(axis=0)
        ratio, _ = kappa_ratios(batch, trajectory.f, agg)
        worst = max(worst, float(ratio.max()))
    if np.isinf(worst):
        raise PropertyViolation("a zero-variance subset has a non-zero distance to the aggregate", witness=trajectory)
    return worst


def generalization_error_linear(theta_T_zero, theta_T_minus, n, f):
    """Expected generalization gap of the pivot-worker setup with pivot law (delta_0 + delta_-1)/2."""
    return (float(theta_T_minus) - float(theta_T_zero)) / (4.0 * (n - f))


def generalization_error_enumerated(theta_by_pivot, pivot_law, other_values):
    """Direct ``E_S[R_H - hat R_H]`` for the linear loss by enumerating the pivot sample.

    ``theta_by_pivot[z]`` is the output when the pivot holds ``z``,
    ``pivot_law`` maps pivot values to probabilities and ``other_values``
    lists the Dirac sample of every other honest worker.
    """
    others = np.asarray(other_values, dtype=float).reshape(-1)
    h = others.size + 1
    total = 0.0
    for z1, prob in pivot_law.items():
        theta = float(theta_by_pivot[z1])
        true_risk = (np.sum(others * theta) + sum(q * z * theta for z, q in pivot_law.items())) / h
        emp_risk = (np.sum(others * theta) + z1 * theta) / h
        total += prob * (true_risk - emp_risk)
    return float(total)


THEOREMS = {
    "byz_convex": ("gamma", "C", "T", "n", "f", "m", "kappa"),
    "byz_strongcvx": ("C", "mu", "n", "f", "m", "kappa"),
    "byz_nonconvex_sgd": ("C", "L", "c", "T", "n", "f", "m", "kappa", "ell_inf"),
    "pois_smea_convex": ("gamma", "C", "T", "n", "f", "m"),
    "pois_smea_strongcvx": ("C", "mu", "n", "f", "m"),
    "pois_smea_nonconvex": ("C", "L", "c", "T", "n", "f", "m", "ell_inf"),
    "pois_cwtm_nonconvex": ("C", "L", "c", "T", "n", "f", "m", "ell_inf", "nu"),
    "lb_pois_convex": ("gamma", "C", "T", "n", "f", "m"),
    "lb_pois_strongcvx": ("C", "mu", "n", "f", "m"),
}
ORDER_ONLY = ("lb_pois_convex", "lb_pois_strongcvx")


@dataclass(frozen=True)
class BoundQuery:
    theorem: str
    n: Optional[int] = None
    f: Optional[int] = None
    m: Optional[int] = None
    T: Optional[int] = None
    C: Optional[float] = None
    L: Optional[float] = None
    gamma: Optional[float] = None
    c: Optional[float] = None
    mu: Optional[float] = None
    kappa: Optional[float] = None
    ell_inf: Optional[float] = None
    nu: Optional[float] = None
    override: bool = False

    def __post_init__(self):
        if self.theorem not in THEOREMS:
            raise ValidationError(f"unknown theorem {self.theorem!r}; expected one of {tuple(THEOREMS)}")

    def with_theorem(self, theorem):
        return BoundQuery(**{**self.__dict__, "theorem": theorem})


@dataclass(frozen=True)
class BoundResult:
    theorem: str
    value: float
    order_only: bool


def _check_query(q):
    names = {"ell_inf": "ell_inf (uniform loss bound)", "kappa": "kappa", "nu": "nu", "mu": "mu", "c": "c"}
    missing = [k for k in THEOREMS[q.theorem] if getattr(q, k) is None]
    if missing:
        raise ValidationError(f"{q.theorem} requires {', '.join(names.get(k, k) for k in missing)}")
    if not (0 <= q.f and 2 * q.f < q.n and q.m >= 1):
        raise ValidationError(f"need 0 <= f < n/2 and m >= 1, got n={q.n}, f={q.f}, m={q.m}")
    if q.kappa is not None and q.kappa < 0:
        raise ValidationError("kappa must be non-negative")
    if q.override:
        return
    if q.gamma is not None and q.L is not None and q.gamma > 1.0 / q.L:
        raise ValidationError(f"{q.theorem} needs gamma <= 1/L (gamma={q.gamma}, L={q.L}); set override to skip")
    if q.mu is not None and q.L is not None and q.mu > q.L:
        raise ValidationError(f"need mu <= L, got mu={q.mu}, L={q.L}")
    if q.theorem == "pois_cwtm_nonconvex" and q.n < (2 + q.nu) * q.f:
        raise ValidationError(f"pois_cwtm_nonconvex needs n >= (2 + nu) f, got n={q.n}, nu={q.nu}, f={q.f}")


def theorem_bound(query):
    """Evaluate one stability bound. Lower bounds carry ``order_only=True`` (constant set to 1)."""
    q = query
    _check_query(q)
    th = q.theorem
    per = 1.0 / ((q.n - q.f) * q.m)
    pois = q.f / (q.n - q.f) + per
    if th == "byz_convex":
        val = 2 * q.gamma * q.C**2 * q.T * (per + sqrt(q.kappa))
    elif th == "byz_strongcvx":
        val = 2 * q.C**2 / q.mu * (per + sqrt(q.kappa))
    elif th == "byz_nonconvex_sgd":
        e = 1.0 / (q.c + 1)
        val = 2 * (2 * q.C**2 / q.L) ** e * (per + sqrt(q.kappa)) ** e * (q.ell_inf * q.T / q.m) ** (q.c * e)
    elif th == "pois_smea_convex":
        val = 2 * q.gamma * q.C**2 * q.T * pois
    elif th == "pois_smea_strongcvx":
        val = 2 * q.C**2 / q.mu * pois
    elif th == "pois_smea_nonconvex":
        e = 1.0 / (q.c + 1)
        val = 2 * (2 * q.C**2 / q.L * pois) ** e * (q.ell_inf * q.T / q.m) ** (q.c * e)
    elif th == "pois_cwtm_nonconvex":
        e = 1.0 / (q.c + 1)
        lead = 2 * q.C**2 * q.nu**2 / ((2 + q.nu) ** 2 * q.L)
        val = 2 * lead**e * (q.T * q.ell_inf) ** (q.c * e) / (q.m * sqrt(q.n) ** e)
    elif th == "lb_pois_convex":
        val = q.gamma * q.C**2 * q.T * pois
    else:
        val = q.C**2 / q.mu * pois
    return BoundResult(theorem=th, value=float(val), order_only=th in ORDER_ONLY)


RATIOS = (
    ("byz_convex", "pois_smea_convex"),
    ("byz_strongcvx", "pois_smea_strongcvx"),
    ("byz_nonconvex_sgd", "pois_smea_nonconvex"),
    ("byz_nonconvex_sgd", "pois_cwtm_nonconvex"),
    ("pois_smea_nonconvex", "pois_cwtm_nonconvex"),
)


def bound_table(query):
    """Every bound computable from the fields of ``query`` plus the pairwise ratios."""
    bounds = {}
    for th in THEOREMS:
        try:
            bounds[th] = theorem_bound(query.with_theorem(th))
        except ValidationError:
            continue
    ratios = {f"{a}/{b}": bounds[a].value / bounds[b].value
              for a, b in RATIOS if a in bounds and b in bounds and bounds[b].value > 0}
    return bounds, ratios


@dataclass(frozen=True)
class LemmaCheck:
    passed: bool
    worst_slack: float
    worst_step: int


def covariance_lemma_check(trajectory, C, honest_ids=None):
    """Pathwise ``Tr Sigma_H <= C^2`` and ``lambda_max(Sigma_H) <= C^2`` on recorded honest gradients."""
    ids = list(trajectory.honest_ids if honest_ids is None else honest_ids)
    worst, step = np.inf, -1
    for t in range(trajectory.T):
        stats = covariance_stats(trajectory.batches[t], sorted(ids))
        slack = min(C**2 - stats.trace, C**2 - stats.lambda_max)
        if slack < worst:
            worst, step = slack, t
    tol = 1e-12 * max(C**2, 1.0)
    return LemmaCheck(passed=bool(worst >= -tol), worst_slack=float(worst), worst_step=step)


@dataclass(frozen=True)
class RefinedCovariance:
    G: float
    sigma: float
    trace_bound: float
    spectral_bound: float
    measured_max_trace: float
    measured_max_spectral: float

    @property
    def passed(self):
        tol = 1e-12 * max(1.0, self.trace_bound)
        return (self.measured_max_trace <= self.trace_bound + tol
                and self.measured_max_spectral <= self.spectral_bound + tol)


def refined_covariance_check(loss, datasets, theta_grid, n, f):
    """Heterogeneity ``G`` and local noise ``sigma`` on a grid, the bounds they give, and measured covariances.

    Measured statistics are the covariance of the full-batch local gradients
    (pathwise) and the exact expectation of the one-sample stochastic
    gradient covariance, both maximised over the grid.
    """
    grid = np.asarray(theta_grid, dtype=float)
    if grid.size == 0:
        raise ValidationError("theta grid is empty")
    if grid.ndim == 1:
        grid = grid[:, None]
    data = np.asarray(datasets, dtype=float)
    h = data.shape[0]
    G = sigma = 0.0
    max_tr = max_sp = 0.0
    for theta in grid:
        g = gradients(loss, theta, data)  # (h, m, d)
        local = g.mean(axis=1)
        dev = local - local.mean(axis=0)
        noise = g - local[:, None, :]
        G = max(G, sqrt(np.mean(np.sum(dev**2, axis=1))))
        sigma = max(sigma, sqrt(np.max(np.mean(np.sum(noise**2, axis=2), axis=1))))
        cov_gd = dev.T @ dev / h
        local_cov = np.einsum("imk,iml->ikl", noise, noise) / g.shape[1]
        cov_sgd = cov_gd + (1 - 1.0 / h) * local_cov.mean(axis=0)
        max_tr = max(max_tr, float(np.trace(cov_gd)), float(np.trace(cov_sgd)))
        max_sp = max(max_sp, max_eigenvalue_sym(cov_gd), max_eigenvalue_sym(cov_sgd))
    return RefinedCovariance(
        G=G,
        sigma=sigma,
        trace_bound=3 * G**2 + 3 * sigma**2 * (1 + 1.0 / (n - f)),
        spectral_bound=sigma**2 + G**2,
        measured_max_trace=max_tr,
        measured_max_spectral=max_sp,
    )


def one_step_update(theta, worker_gradients, rule, f, gamma):
    """``theta - gamma * F(g_1(theta), ..., g_n(theta))`` for a callable returning the ``(n, d)`` batch."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    return th - gamma * aggregate(rule, worker_gradients(th), f).aggregate


def expansivity_coefficient(rule, n, f, d, gamma, L, mu=None, regime="nonconvex"):
    """Expansivity factor of the one-step update for the mean rule or CWTM."""
    if rule == "cwtm":
        return 1 + gamma * L * min(n / (n - 2 * f), sqrt(n), sqrt(d))
    if rule != "mean":
        raise ValidationError(f"no expansivity coefficient for rule {rule!r}")
    if regime == "nonconvex":
        return 1 + gamma * L
    if regime == "convex":
        if gamma > 2.0 / L:
            raise ValidationError("convex expansivity needs gamma <= 2/L")
        return 1.0
    if regime == "strongly_convex":
        if mu is None or gamma > 1.0 / L:
            raise ValidationError("strongly convex expansivity needs mu and gamma <= 1/L")
        return 1 - gamma * mu
    raise ValidationError(f"unknown regime {regime!r}")


@dataclass(frozen=True)
class CocoercivityWitness:
    v: np.ndarray
    x: np.ndarray
    theta: np.ndarray
    inner_product: float


def _regression_batch(theta, samples):
    # squared regression gradients (theta.x - y) x for rows [x, y]
    x, y = samples[..., :-1], samples[..., -1]
    return (x @ theta - y)[..., None] * x


# witnesses only exist for ||x|| below roughly 0.45 sqrt(L)
COCOERCIVITY_RADII = (0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 0.9)


def cwtm_cococercivity_counterexample(L=1.0, angles=720, radii=COCOERCIVITY_RADII, threshold=-1e-6):
    """Search for samples on which CWTM breaks co-coercivity of the squared regression loss.

    Three workers (f = 1) hold ``(v, 0)``, ``(x, 0)`` and ``(x, 1)``; the two
    points are ``theta = x / L`` and ``omega = 0``. Returns the grid
    point with the most negative ``<theta - omega, CWTM(theta) - CWTM(omega)>``,
    provided it is below ``threshold``.
    """
    if not L > 0:
        raise ValidationError("L must be positive")
    phis = 2 * np.pi * np.arange(angles) / angles
    unit = np.stack([np.cos(phis), np.sin(phis)], axis=1)
    vs = sqrt(L) * unit
    omega = np.zeros(2)
    best = None
    for r in radii:
        for ux in unit:
            x = r * sqrt(L) * ux
            theta = x / L
            # one row per candidate v: samples (v, 0), (x, 0), (x, 1)
            samples = np.stack([
                np.column_stack([vs, np.zeros(angles)]),
                np.tile(np.append(x, 0.0), (angles, 1)),
                np.tile(np.append(x, 1.0), (angles, 1)),
            ])
            at_theta = _regression_batch(theta, samples)
            at_omega = _regression_batch(omega, samples)
            diff = trimmed_mean(at_theta, 1) - trimmed_mean(at_omega, 1)
            ips = diff @ (theta - omega)
            k = int(np.argmin(ips))
            if ips[k] < threshold and (best is None or ips[k] < best.inner_product):
                best = CocoercivityWitness(v=vs[k].copy(), x=x.copy(), theta=theta.copy(), inner_product=float(ips[k]))
    if best is not None:
        return best
    raise CounterexampleNotFoundError("no co-coercivity counterexample on the search grid")


# correctly spelled alias
cwtm_cocoercivity_counterexample = cwtm_cococercivity_counterexample
