"""Seeded property suites over random instances.

Each suite returns a :class:`SuiteResult` with the number of cases, the
number of violations, the worst slack seen (negative means violated) and
the first violating input. ``kappa_scale`` shrinks the certified
coefficients, which should make the certification suites fail.
"""

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .aggregation import (
    RobustnessSpec, aggregate_cwtm, aggregate_smea, check_robustness,
    kappa_cwtm, kappa_smea, trimmed_mean,
)
from .analysis import (
    covariance_lemma_check, cwtm_cococercivity_counterexample, expansivity_coefficient,
    one_step_update, refined_covariance_check,
)
from .engine import NeighboringPair, RunConfig, WorkerSet, first_divergence_step, first_draw_step, run_paired
from .errors import LabError, ValidationError
from .linalg import max_eigenvalue_sym
from .losses import quadratic_mean
from .threats import ConstructionParams, build_linear_lb, build_strongcvx_lb

SLACK_TOL = 1e-9


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: int = 0
    worst_slack: float = float("inf")
    witness: Optional[Any] = None
    notes: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.failures == 0 and self.cases > 0

    def record(self, slack, witness=None, tol=SLACK_TOL):
        self.cases += 1
        slack = float(slack)
        if slack < self.worst_slack:
            self.worst_slack = slack
        if slack < -tol:
            self.failures += 1
            if self.witness is None:
                self.witness = witness


def _random_batch(rng, n_max=10, d_max=4):
    n = int(rng.integers(2, n_max + 1))
    d = int(rng.integers(1, d_max + 1))
    f = int(rng.integers(0, (n - 1) // 2 + 1))
    scale = 10.0 ** rng.uniform(-2, 2)
    g = rng.normal(size=(n, d)) * scale
    if rng.random() < 0.3:
        # outliers on a few rows
        k = int(rng.integers(1, max(f, 1) + 1))
        g[:k] += rng.normal(size=(k, d)) * scale * 50
    if rng.random() < 0.2:
        # exact duplicates
        g[n // 2:] = g[0]
    return g, f


def suite_linalg(rng, cases=200):
    res = SuiteResult("linalg")
    for _ in range(cases):
        d = int(rng.integers(1, 7))
        a = rng.normal(size=(d, d))
        mat = a @ a.T if rng.random() < 0.5 else a + a.T
        lam = max_eigenvalue_sym(mat)
        u = rng.normal(size=(500, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        rq = np.einsum("ki,ij,kj->k", u, mat, u).max()
        res.record(lam + 1e-8 - rq, witness=mat)
    return res


def suite_certification(rng, rule, cases=1000, kappa_scale=1.0):
    res = SuiteResult(f"{rule}-certification")
    for _ in range(cases):
        g, f = _random_batch(rng)
        n = g.shape[0]
        if rule == "smea":
            out = aggregate_smea(g, f).aggregate
            spec = RobustnessSpec(f, kappa_scale * kappa_smea(n, f), "spectral")
        else:
            out = aggregate_cwtm(g, f).aggregate
            spec = RobustnessSpec(f, kappa_scale * kappa_cwtm(n, f), "trace")
        cert = check_robustness(g, out, spec)
        slack = 0.0 if cert.passed else cert.worst_slack
        res.record(slack, witness={"batch": g, "f": f, "subset": cert.worst_subset}, tol=0.0)
    return res


def suite_trimmed_mean(rng, cases=10_000):
    res = SuiteResult("trimmed-mean")
    for _ in range(cases):
        n = int(rng.integers(1, 16))
        f = int(rng.integers(0, (n - 1) // 2 + 1))
        x = rng.normal(size=n) * 10 ** rng.uniform(-2, 2)
        y = x + rng.normal(size=n) * 10 ** rng.uniform(-3, 1) if rng.random() < 0.7 else rng.normal(size=n)
        diff = float(trimmed_mean(x, f) - trimmed_mean(y, f))
        scale = max(1.0, np.abs(x).max(), np.abs(y).max())
        lip = np.abs(x - y).sum() / (n - 2 * f) - abs(diff)
        lo = diff - (x - y).min()
        hi = (x - y).max() - diff
        res.record(min(lip, lo, hi) / scale, witness={"x": x, "y": y, "f": f}, tol=1e-12)
    return res


def _pool_formula(values, mults, k):
    """Minimum over (a, b, c) of the pick-lemma expression for a three-value pool."""
    gA, gB, gC = values
    best = np.inf
    for a in range(min(mults[0], k) + 1):
        for b in range(min(mults[1], k - a) + 1):
            c = k - a - b
            if c > mults[2]:
                continue
            val = (a * b * (gA - gB) ** 2 + b * c * (gB - gC) ** 2 + a * c * (gA - gC) ** 2) / k**2
            best = min(best, val)
    return best


def suite_pick_lemma(rng, cases=500):
    res = SuiteResult("pick-lemma")
    for _ in range(cases):
        n = int(rng.integers(3, 10))
        f = int(rng.integers(0, (n - 1) // 2 + 1))
        cuts = np.sort(rng.choice(np.arange(1, n), size=2, replace=False))
        mults = (int(cuts[0]), int(cuts[1] - cuts[0]), int(n - cuts[1]))
        vals = np.sort(rng.choice(np.arange(-20, 21), size=3, replace=False) * rng.uniform(0.1, 2))
        g = np.repeat(vals, mults)
        rng.shuffle(g)
        exhaustive = aggregate_smea(g, f).selected_lambda_max
        formula = _pool_formula(vals, mults, n - f)
        res.record(-abs(exhaustive - formula) / max(1.0, formula) + 1e-10,
                   witness={"values": vals, "mults": mults, "f": f}, tol=0.0)
    return res


def _quadratic_workers(rng, n, d, L, mu=0.0):
    mats = []
    for _ in range(n):
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        eig = rng.uniform(mu, L, size=d)
        eig[rng.integers(d)] = L if rng.random() < 0.5 else eig[0]
        mats.append(q @ np.diag(eig) @ q.T)
    mats = np.array(mats)
    centres = rng.normal(size=(n, d)) * 3
    return lambda th: np.einsum("nij,nj->ni", mats, th - centres)


def _sine_workers(rng, n, d, L):
    # nonconvex, L-smooth: L (1 - cos(theta - c)) per coordinate
    centres = rng.normal(size=(n, d)) * 3
    return lambda th: L * np.sin(th - centres)


def suite_expansivity(rng, cases=10_000):
    res = SuiteResult("expansivity")
    regimes = ("nonconvex", "convex", "strongly_convex")
    for k in range(cases):
        regime = regimes[k % 3]
        n, d = int(rng.integers(1, 8)), int(rng.integers(1, 5))
        L = 10 ** rng.uniform(-1, 1)
        if regime == "nonconvex":
            gamma = rng.uniform(0.01, 3) / L
            grads = _sine_workers(rng, n, d, L) if rng.random() < 0.5 else _quadratic_workers(rng, n, d, L)
            mu = None
        elif regime == "convex":
            gamma = rng.uniform(0.01, 2) / L
            grads, mu = _quadratic_workers(rng, n, d, L), None
        else:
            mu = rng.uniform(0.05, 1) * L
            gamma = rng.uniform(0.01, 1) / L
            grads = _quadratic_workers(rng, n, d, L, mu)
        eta = expansivity_coefficient("mean", n, 0, d, gamma, L, mu, regime)
        th, om = rng.normal(size=d) * 5, rng.normal(size=d) * 5
        lhs = np.linalg.norm(one_step_update(th, grads, "mean", 0, gamma) - one_step_update(om, grads, "mean", 0, gamma))
        dist = np.linalg.norm(th - om)
        res.record((eta * dist - lhs) / max(1.0, dist), witness={"regime": regime, "theta": th, "omega": om})
    return res


def suite_cwtm_expansivity(rng, cases=10_000):
    res = SuiteResult("cwtm-expansivity")
    for _ in range(cases):
        n, d = int(rng.integers(1, 10)), int(rng.integers(1, 5))
        f = int(rng.integers(0, (n - 1) // 2 + 1))
        L = 10 ** rng.uniform(-1, 1)
        gamma = rng.uniform(0.01, 2) / L
        quad = _quadratic_workers(rng, n, d, L)
        sine = _sine_workers(rng, n, d, L)
        mask = rng.random(n) < 0.5
        grads = lambda th: np.where(mask[:, None], quad(th), sine(th))
        eta = expansivity_coefficient("cwtm", n, f, d, gamma, L)
        th = rng.normal(size=d) * 5
        om = th + rng.normal(size=d) * 10 ** rng.uniform(-3, 1)
        lhs = np.linalg.norm(one_step_update(th, grads, "cwtm", f, gamma) - one_step_update(om, grads, "cwtm", f, gamma))
        dist = np.linalg.norm(th - om)
        res.record((eta * dist - lhs) / max(1.0, dist), witness={"theta": th, "omega": om, "f": f})
    return res


def suite_cocoercivity(rng=None):
    res = SuiteResult("cocoercivity")
    try:
        w = cwtm_cococercivity_counterexample(1.0)
    except LabError as exc:
        res.record(-1.0, witness=str(exc))
        return res
    res.record(-1e-6 - w.inner_product, witness=w)
    res.notes["inner_product"] = w.inner_product
    return res


def suite_constructions(rng=None):
    res = SuiteResult("constructions")
    for f in range(1, 8):
        p = ConstructionParams(n=15, f=f, m=1, C=1.0, gamma=1.0, T=5)
        out = build_linear_lb(p)
        cfg = RunConfig(algorithm="gd", rule="smea", T=5, f=f, gamma=1.0)
        a, b = run_paired(cfg, out.pair, out.workers, out.loss)
        sel_ok = all(s == out.predicted["selected_base"] for s in a.selected_subsets) and all(
            s == out.predicted["selected_variant"] for s in b.selected_subsets)
        err = max(abs(a.thetas[-1, 0] - out.predicted["theta_T"]),
                  abs(b.thetas[-1, 0] - out.predicted["theta_T_variant"]))
        res.record((1e-9 - err) if sel_ok else -1.0, witness={"construction": "linear", "f": f}, tol=0.0)
    for f in range(1, 7):
        p = ConstructionParams(n=15, f=f, m=1, C=1.0, L=1.0, mu=1.0, gamma=1.0, T=5)
        out = build_strongcvx_lb(p)
        cfg = RunConfig(algorithm="gd", rule="smea", T=5, f=f, gamma=1.0)
        a, b = run_paired(cfg, out.pair, out.workers, out.loss)
        sel_ok = all(s == out.predicted["selected_base"] for s in a.selected_subsets) and all(
            s == out.predicted["selected_variant"] for s in b.selected_subsets)
        err = max(abs(a.thetas[-1, 0] - out.predicted["theta_T"]),
                  abs(b.thetas[-1, 0] - out.predicted["theta_T_variant"]))
        res.record((1e-9 - err) if sel_ok else -1.0, witness={"construction": "strongly_convex", "f": f}, tol=0.0)
    return res


def coupling_instance(rng, rule="mean", T=12):
    """Random SGD neighbouring pair for the quadratic loss; returns (config, pair, workers, loss)."""
    n = int(rng.integers(3, 8))
    m = int(rng.integers(2, 6))
    f = 0 if rule == "mean" else int(rng.integers(0, (n - 1) // 2 + 1))
    loss = quadratic_mean(C=1.0, mu=1.0)
    base = rng.uniform(-0.5, 0.5, size=(n, m, 1))
    a, b = int(rng.integers(n)), int(rng.integers(m))
    variant = base.copy()
    variant[a, b, 0] = rng.uniform(-0.5, 0.5)
    pair = NeighboringPair(base, variant, (a, b))
    workers = WorkerSet(n=n, honest_ids=tuple(range(n)), datasets=base)
    cfg = RunConfig(algorithm="sgd", rule=rule, T=T, f=f, gamma=float(rng.uniform(0.1, 1.0)),
                    theta0=np.array([rng.uniform(-0.5, 0.5)]), seed=int(rng.integers(2**31)))
    return cfg, pair, workers, loss


def suite_coupling(rng, cases=100):
    res = SuiteResult("coupling")
    for k in range(cases):
        rule = ("mean", "cwtm", "smea")[k % 3]
        cfg, pair, workers, loss = coupling_instance(rng, rule)
        t1, t2 = run_paired(cfg, pair, workers, loss)
        a, b = pair.diff_location
        s = first_draw_step(t1, a, b)
        div = first_divergence_step(t1, t2)
        upto = cfg.T if s is None else s
        same = np.array_equal(t1.thetas[:upto + 1], t2.thetas[:upto + 1])
        if rule == "mean":
            ok = same and div == (None if s is None else s + 1)
        else:
            ok = same and (div is None or (s is not None and div >= s + 1))
        res.record(0.0 if ok else -1.0, witness={"config": cfg, "pair": pair, "draw": s, "divergence": div}, tol=0.0)
    return res


def suite_covariance(rng, trajectories=(), C=1.0, cases=100):
    res = SuiteResult("covariance")
    for traj in trajectories:
        chk = covariance_lemma_check(traj, C)
        res.record(chk.worst_slack, witness={"step": chk.worst_step}, tol=1e-12)
    for _ in range(cases):
        n = int(rng.integers(4, 12))
        f = int(rng.integers(0, (n - 1) // 2 + 1))
        h, m = n - f, int(rng.integers(1, 6))
        mu = 10 ** rng.uniform(-1, 0.5)
        loss = quadratic_mean(C=1.0, mu=mu)
        r = 1.0 / (2 * mu)
        centres = rng.uniform(-r, r, size=(h, 1, 1))
        data = np.clip(centres + rng.normal(size=(h, m, 1)) * r * rng.uniform(0, 0.5), -r, r)
        grid = np.linspace(-r, r, 21)
        rep = refined_covariance_check(loss, data, grid, n, f)
        slack = min(rep.trace_bound - rep.measured_max_trace, rep.spectral_bound - rep.measured_max_spectral)
        res.record(slack, witness={"data": data, "n": n, "f": f}, tol=1e-12)
    return res


SUITES = {
    "linalg": lambda rng, k: suite_linalg(rng),
    "smea-certification": lambda rng, k: suite_certification(rng, "smea", 1000, k),
    "cwtm-certification": lambda rng, k: suite_certification(rng, "cwtm", 1000, k),
    "trimmed-mean": lambda rng, k: suite_trimmed_mean(rng),
    "pick-lemma": lambda rng, k: suite_pick_lemma(rng),
    "expansivity": lambda rng, k: suite_expansivity(rng),
    "cwtm-expansivity": lambda rng, k: suite_cwtm_expansivity(rng),
    "cocoercivity": lambda rng, k: suite_cocoercivity(rng),
    "constructions": lambda rng, k: suite_constructions(rng),
    "coupling": lambda rng, k: suite_coupling(rng),
    "covariance": lambda rng, k: suite_covariance(rng),
}


def run_suites(seed=0, names=None, kappa_scale=1.0):
    """Run the named suites (all by default), each with its own child generator."""
    names = list(SUITES) if names is None else list(names)
    unknown = [s for s in names if s not in SUITES]
    if unknown:
        raise ValidationError(f"unknown suite(s) {unknown}; available: {sorted(SUITES)}")
    children = np.random.SeedSequence(seed).spawn(len(SUITES))
    seeds = dict(zip(SUITES, children))
    return [SUITES[name](np.random.default_rng(seeds[name]), kappa_scale) for name in names]
