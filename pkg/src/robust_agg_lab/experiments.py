"""Stability sweep over f for GD + SMEA under poisoning and the tailored Byzantine attack."""

from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from .aggregation import kappa_smea
from .analysis import (
    BoundQuery, StabilityReport, empirical_kappa, generalization_error_linear, measure_stability, theorem_bound,
)
from .engine import RunConfig, monte_carlo_paired, run_paired
from .errors import ConfigurationError, LabError, ValidationError
from .threats import (
    ConstructionParams, build_linear_lb, build_projected_lb, build_strongcvx_lb, build_tailored_attack,
)

FIGURE1_COLUMNS = (
    "f", "kappa_theory", "kappa_hat_pois_base", "kappa_hat_pois_variant", "kappa_hat_byz_base",
    "kappa_hat_byz_variant", "stab_pois", "stab_byz", "lb_pois", "ub_pois", "ub_byz_theory",
    "ub_byz_empirical", "gen_err_pois", "gen_err_byz",
)
FIGURE1_DEFAULTS = {"n": 15, "m": 1, "C": 1.0, "gamma": 1.0, "T": 5}


@dataclass
class Figure1Cell:
    f: int
    row: dict
    reports: dict = field(default_factory=dict)
    trajectories: dict = field(default_factory=dict)
    status: str = "ok"


def _attack_report(label, f, pair_runs, loss, params, kappa, lb, ub_theory):
    base, variant = pair_runs
    stab = measure_stability(pair_runs, loss)
    kb, kv = empirical_kappa(base), empirical_kappa(variant)
    n, m = params.n, params.m
    ub_emp = params.gamma * params.C * params.T * (2.0 / ((n - f) * m) + sqrt(kb) + sqrt(kv))
    # base run has the pivot at -C, the variant at 0
    gen = generalization_error_linear(variant.thetas[-1, 0], base.thetas[-1, 0], n, f)
    return StabilityReport(
        attack=label, f=f, measured_stability=stab, ub_theoretical=ub_theory, kappa_hat_base=kb,
        kappa_hat_variant=kv, lb_theoretical=lb, ub_empirical_kappa=ub_emp, gen_error=gen,
    )


def figure1_cell(f, n=15, m=1, C=1.0, gamma=1.0, T=5, epsilon=1e-3):
    """Both attacks at one value of f; infeasible attacks mark the row instead of raising."""
    params = ConstructionParams(n=n, f=f, m=m, C=C, gamma=gamma, T=T)
    cfg = RunConfig(algorithm="gd", rule="smea", T=T, f=f, gamma=gamma)
    kappa = kappa_smea(n, f)
    common = dict(gamma=gamma, C=C, T=T, n=n, f=f, m=m)
    lb = theorem_bound(BoundQuery("lb_pois_convex", **common)).value
    ub_pois = theorem_bound(BoundQuery("pois_smea_convex", **common)).value
    ub_byz = theorem_bound(BoundQuery("byz_convex", kappa=kappa, **common)).value

    lin = build_linear_lb(params)
    pois_runs = run_paired(cfg, lin.pair, lin.workers, lin.loss)
    cell = Figure1Cell(f=f, row={})
    cell.trajectories["pois"] = pois_runs
    cell.reports["pois"] = _attack_report("poisoning", f, pois_runs, lin.loss, params, kappa, lb, ub_pois)
    if f == 0:
        cell.trajectories["byz"] = pois_runs
        cell.reports["byz"] = _attack_report("byzantine", f, pois_runs, lin.loss, params, kappa, None, ub_byz)
    else:
        try:
            pair, workers, loss = build_tailored_attack(params, epsilon=epsilon)
            byz_runs = run_paired(cfg, pair, workers, loss)
            cell.trajectories["byz"] = byz_runs
            cell.reports["byz"] = _attack_report("byzantine", f, byz_runs, loss, params, kappa, None, ub_byz)
        except LabError as exc:
            cell.status = f"infeasible: {exc}"
    pr, br = cell.reports["pois"], cell.reports.get("byz")
    nan = float("nan")
    cell.row = {
        "f": f,
        "kappa_theory": kappa,
        "kappa_hat_pois_base": pr.kappa_hat_base,
        "kappa_hat_pois_variant": pr.kappa_hat_variant,
        "kappa_hat_byz_base": br.kappa_hat_base if br else nan,
        "kappa_hat_byz_variant": br.kappa_hat_variant if br else nan,
        "stab_pois": pr.measured_stability,
        "stab_byz": br.measured_stability if br else nan,
        "lb_pois": lb,
        "ub_pois": ub_pois,
        "ub_byz_theory": ub_byz,
        "ub_byz_empirical": br.ub_empirical_kappa if br else nan,
        "gen_err_pois": pr.gen_error,
        "gen_err_byz": br.gen_error if br else nan,
    }
    return cell


def figure1(f_values=range(1, 8), **kwargs):
    """One :class:`Figure1Cell` per f, in order."""
    opts = {**FIGURE1_DEFAULTS, **kwargs}
    f_values = list(f_values)
    if not f_values:
        raise ValidationError("empty f range")
    for f in f_values:
        if not 0 <= f < opts["n"] / 2:
            raise ValidationError(f"f={f} outside [0, n/2) for n={opts['n']}")
    return [figure1_cell(f, **opts) for f in f_values]


def figure1_table(cells):
    """Rows with the figure columns plus a trailing ``status`` column."""
    return [{**c.row, "status": c.status} for c in cells]


def byzantine_membership_audit(cell):
    """Whether every Byzantine value sent at theta != 0 was kept by SMEA at that step."""
    if "byz" not in cell.trajectories or cell.f == 0:
        return True
    for traj in cell.trajectories["byz"]:
        for t in range(traj.T):
            if traj.thetas[t, 0] != 0.0 and not set(traj.byzantine_ids) & set(traj.selected[t].tolist()):
                return False
    return True


def as_array(cells, column):
    return np.array([c.row[column] for c in cells], dtype=float)


SCENARIOS = ("linear", "strongcvx", "projected", "tailored", "baseline")


def projected_stability_floor(params):
    """Guaranteed mean stability of the projected construction: half(1 - (1 - e^-tau)/tau) p gamma C^2 T."""
    tau = params.T / params.m
    return 0.5 * (1 - (1 - float(np.exp(-tau))) / tau) * params.p * params.gamma * params.C**2 * params.T


def _bounds(params, kappa, mu=None):
    common = dict(gamma=params.gamma, C=params.C, T=params.T, n=params.n, f=params.f, m=params.m, L=params.L)
    if mu is None:
        names = ("lb_pois_convex", "pois_smea_convex", "byz_convex")
    else:
        common["mu"] = mu
        names = ("lb_pois_strongcvx", "pois_smea_strongcvx", "byz_strongcvx")
    return {th: theorem_bound(BoundQuery(th, kappa=kappa, override=True, **common)).value for th in names}


def _trajectory_record(pair_runs):
    base, variant = pair_runs
    return {"thetas_base": base.thetas, "thetas_variant": variant.thetas}


def run_scenario(scenario, params, seeds=1, seed=0, rule="smea", epsilon=1e-3):
    """Execute one named configuration and return a flat report dictionary.

    ``linear``, ``strongcvx`` and ``tailored`` are deterministic GD runs;
    ``projected`` averages ``seeds`` paired projected-SGD runs; ``baseline``
    is the attack-free mean-rule run of the linear construction.
    """
    if scenario not in SCENARIOS:
        raise ConfigurationError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    kappa = kappa_smea(params.n, params.f)
    gd = RunConfig(algorithm="gd", rule=rule, T=params.T, f=params.f, gamma=params.gamma, seed=seed)
    report = {"scenario": scenario, "rule": rule, "n": params.n, "f": params.f, "m": params.m,
              "T": params.T, "C": params.C, "gamma": params.gamma, "p": params.p}
    if scenario in ("linear", "baseline"):
        if scenario == "baseline":
            if params.f != 0:
                raise ConfigurationError("baseline scenario needs f = 0")
            gd = RunConfig(algorithm="gd", rule="mean", T=params.T, f=0, gamma=params.gamma, seed=seed)
            report["rule"] = "mean"
        out = build_linear_lb(params)
        runs = run_paired(gd, out.pair, out.workers, out.loss)
        pred = params.C * abs(out.predicted["theta_T"] - out.predicted["theta_T_variant"])
        report.update(measured_stability=measure_stability(runs, out.loss), predicted_stability=pred, psi=out.psi,
                      **_bounds(params, kappa))
        if scenario == "baseline":
            report["classic_bound"] = 2 * params.gamma * params.C**2 * params.T / (params.n * params.m)
    elif scenario == "strongcvx":
        out = build_strongcvx_lb(params)
        mu = out.loss.mu
        runs = run_paired(gd, out.pair, out.workers, out.loss)
        report.update(measured_stability=measure_stability(runs, out.loss), theta_T=float(runs[0].thetas[-1, 0]),
                      predicted_theta_T=out.predicted["theta_T"], psi=out.psi, mu=mu, **_bounds(params, kappa, mu))
    elif scenario == "tailored":
        if params.f == 0:
            raise ConfigurationError("tailored scenario needs f >= 1")
        pair, workers, loss = build_tailored_attack(params, epsilon=epsilon)
        runs = run_paired(gd, pair, workers, loss)
        report.update(measured_stability=measure_stability(runs, loss), kappa_theory=kappa,
                      kappa_hat_base=empirical_kappa(runs[0]), kappa_hat_variant=empirical_kappa(runs[1]),
                      **_bounds(params, kappa))
    else:
        out = build_projected_lb(params)
        cfg = RunConfig(algorithm="projected_sgd", rule=rule, T=params.T, f=params.f, gamma=params.gamma,
                        theta0=np.zeros(params.dim), seed=seed, mc_runs=int(seeds))
        pairs = monte_carlo_paired(cfg, out.pair, out.workers, out.loss)
        v = out.predicted["v"]
        lam = np.array([a.thetas[-1] @ v for a, _ in pairs]) / float(v @ v)
        runs = pairs[0]
        report.update(
            seeds=int(seeds), epsilon=out.predicted["epsilon"],
            mc_mean_lambda_T=float(lam.mean()),
            mc_stderr_lambda_T=float(lam.std(ddof=1) / np.sqrt(lam.size)) if lam.size > 1 else float("nan"),
            expected_lambda_T=out.predicted["expected_lambda_T"],
            measured_stability=measure_stability(pairs, out.loss, z_grid=[out.predicted["witness"]]),
            stability_floor=projected_stability_floor(params),
        )
    report.update(_trajectory_record(runs))
    return report
