"""Command-line front end: ``robust-agg-lab <command> [options]``.

Configuration files are flat ``key = value`` text (``#`` starts a comment).
Command-line flags and ``--set key=value`` override file keys. Keys accepted
by every command: ``seed``, ``seeds``, ``out``, ``format``, ``emit_plot_script``,
``f_range``. Per-command keys are listed in :data:`COMMAND_KEYS`.
"""

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import experiments
from .aggregation import kappa_cwtm, kappa_smea
from .analysis import BoundQuery, bound_table, cwtm_cococercivity_counterexample
from .errors import ConfigurationError, LabError, PropertyViolation, ValidationError
from .threats import ConstructionParams
from .verify import SUITES, run_suites

COMMANDS = ("figure1", "verify", "bounds", "run", "counterexample")
FORMATS = ("csv", "json")


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


KEY_TYPES = {
    "seed": int, "seeds": int, "out": str, "format": str, "emit_plot_script": _bool, "f_range": str,
    "n": int, "f": int, "m": int, "T": int, "C": float, "L": float, "mu": float, "gamma": float,
    "epsilon": float, "psi_override": float, "dim": int, "c": float, "kappa": float, "ell_inf": float,
    "nu": float, "override": _bool, "rule": str, "scenario": str, "suite": str, "kappa_scale": float,
    "angles": int,
}
COMMON_KEYS = ("seed", "seeds", "out", "format", "emit_plot_script", "f_range")
COMMAND_KEYS = {
    "figure1": ("n", "m", "C", "gamma", "T", "epsilon"),
    "verify": ("suite", "kappa_scale"),
    "bounds": ("n", "f", "m", "T", "C", "L", "gamma", "c", "mu", "kappa", "ell_inf", "nu", "override", "rule"),
    "run": ("scenario", "n", "f", "m", "T", "C", "L", "mu", "gamma", "epsilon", "psi_override", "dim", "rule"),
    "counterexample": ("L", "angles"),
}
REQUIRED_KEYS = {"run": ("scenario",)}
# experiment constants of the stability figure
FIGURE_CONSTANTS = {"n": 15, "m": 1, "C": 1.0, "gamma": 1.0, "T": 5, "L": 1.0}


@dataclass
class ExperimentConfig:
    command: str
    values: dict = field(default_factory=dict)
    output_path: str = None
    format: str = "csv"
    emit_plot_script: bool = False
    seeds: int = 1
    seed: int = 0

    def get(self, key, default=None):
        return self.values.get(key, default)


def parse_config_text(text):
    """``key = value`` lines into a dict of raw strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"config line {lineno}: empty key")
        out[key] = value
    return out


def _typed(key, value):
    if key not in KEY_TYPES:
        raise ConfigurationError(f"unknown config key {key!r}")
    if not isinstance(value, str):
        return value
    try:
        return KEY_TYPES[key](value)
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key!r}: {exc}") from None


def build_config(command, raw):
    """Validate raw key/value pairs for ``command`` into an :class:`ExperimentConfig`."""
    if command not in COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}; expected one of {COMMANDS}")
    allowed = set(COMMON_KEYS) | set(COMMAND_KEYS[command])
    values = {}
    for key, value in raw.items():
        if key not in allowed:
            raise ConfigurationError(f"key {key!r} is not accepted by {command}; allowed: {sorted(allowed)}")
        values[key] = _typed(key, value)
    missing = [k for k in REQUIRED_KEYS.get(command, ()) if k not in values]
    if missing:
        raise ConfigurationError(f"{command} requires config key(s) {missing}")
    fmt = values.pop("format", "csv")
    if fmt not in FORMATS:
        raise ConfigurationError(f"format must be one of {FORMATS}, got {fmt!r}")
    plot = values.pop("emit_plot_script", False)
    if plot and command != "figure1":
        raise ConfigurationError("plot scripts are only emitted for figure1")
    seeds = values.pop("seeds", 1)
    if seeds < 1:
        raise ConfigurationError("seeds must be positive")
    return ExperimentConfig(command=command, values=values, output_path=values.pop("out", None), format=fmt,
                            emit_plot_script=plot, seeds=seeds, seed=values.pop("seed", 0))


def parse_f_range(text):
    """``"A..B"`` (inclusive) or a single integer into a list of f values."""
    try:
        if ".." in text:
            lo, hi = (int(s) for s in text.split("..", 1))
        else:
            lo = hi = int(text)
    except ValueError:
        raise ConfigurationError(f"f range must look like A..B, got {text!r}") from None
    if lo > hi or lo < 0:
        raise ConfigurationError(f"invalid f range {text!r}")
    return list(range(lo, hi + 1))


def _f_values(cfg, default):
    if "f_range" in cfg.values:
        return parse_f_range(cfg.values["f_range"])
    if "f" in cfg.values:
        return [cfg.values["f"]]
    return list(default)


# ---------------------------------------------------------------- commands


def cmd_figure1(cfg):
    opts = {k: cfg.values[k] for k in COMMAND_KEYS["figure1"] if k in cfg.values}
    cells = experiments.figure1(_f_values(cfg, range(1, 8)), **opts)
    return {"command": "figure1", "columns": list(experiments.FIGURE1_COLUMNS) + ["status"],
            "rows": experiments.figure1_table(cells)}


def cmd_verify(cfg, stream=None):
    stream = sys.stdout if stream is None else stream
    names = None
    if "suite" in cfg.values:
        names = [s.strip() for s in cfg.values["suite"].split(",") if s.strip()]
    results = run_suites(seed=cfg.seed, names=names, kappa_scale=cfg.get("kappa_scale", 1.0))
    rows = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.cases - r.failures}/{r.cases} passed, worst slack {r.worst_slack:.3e}",
              file=stream)
        rows.append({"suite": r.name, "cases": r.cases, "failures": r.failures, "worst_slack": r.worst_slack,
                     "passed": r.passed})
    report = {"command": "verify", "seed": cfg.seed, "columns": list(rows[0]) if rows else [], "rows": rows}
    failed = [r for r in results if not r.passed]
    return report, failed


def _bound_query(cfg, f):
    vals = {**FIGURE_CONSTANTS, **{k: v for k, v in cfg.values.items() if k in COMMAND_KEYS["bounds"]}}
    rule = vals.pop("rule", "smea")
    if rule not in ("smea", "cwtm"):
        raise ConfigurationError(f"rule must be smea or cwtm, got {rule!r}")
    vals["f"] = f
    if "kappa" not in cfg.values:
        vals["kappa"] = (kappa_smea if rule == "smea" else kappa_cwtm)(vals["n"], f)
    return BoundQuery("byz_convex", **vals)


def cmd_bounds(cfg):
    # the step-size constant c marks a nonconvex query, which needs the uniform loss bound
    if "c" in cfg.values and "ell_inf" not in cfg.values:
        raise ValidationError("nonconvex bounds require ell_inf (uniform loss bound)")
    rows = []
    for f in _f_values(cfg, [3]):
        bounds, ratios = bound_table(_bound_query(cfg, f))
        for name, b in bounds.items():
            rows.append({"f": f, "name": name, "value": b.value, "order_only": b.order_only})
        for name, value in ratios.items():
            rows.append({"f": f, "name": f"ratio {name}", "value": value, "order_only": False})
    return {"command": "bounds", "columns": ["f", "name", "value", "order_only"], "rows": rows}


def cmd_run(cfg):
    keys = ("n", "f", "m", "T", "C", "L", "mu", "gamma", "epsilon", "psi_override", "dim")
    pvals = {k: cfg.values[k] for k in keys if k in cfg.values}
    scenario = cfg.values["scenario"]
    # the tailored attack has its own epsilon (offset); the projected construction uses the margin
    attack_eps = pvals.get("epsilon", 1e-3)
    if scenario == "tailored":
        pvals.pop("epsilon", None)
    report = experiments.run_scenario(scenario, ConstructionParams(**pvals), seeds=cfg.seeds, seed=cfg.seed,
                                      rule=cfg.get("rule", "smea"), epsilon=attack_eps)
    return {"command": "run", "report": report}


def cmd_counterexample(cfg):
    w = cwtm_cococercivity_counterexample(L=cfg.get("L", 1.0), angles=cfg.get("angles", 720))
    return {"command": "counterexample", "report": {k: getattr(w, k) for k in w.__dataclass_fields__}}


# ---------------------------------------------------------------- output


def _plain(obj):
    """JSON-ready copy: arrays to nested lists, numpy scalars to Python scalars."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, np.ndarray):
        return " ".join(format_value(v) for v in value.reshape(-1))
    return str(value)


def to_csv(result):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if "rows" in result:
        writer.writerow(result["columns"])
        for row in result["rows"]:
            writer.writerow([format_value(row[c]) for c in result["columns"]])
    else:
        writer.writerow(["key", "value"])
        for k, v in result["report"].items():
            writer.writerow([k, format_value(np.asarray(v) if isinstance(v, (list, tuple)) else v)])
    return buf.getvalue()


def to_json(result):
    return json.dumps(_plain(result), indent=2) + "\n"


def render(result, fmt):
    return to_csv(result) if fmt == "csv" else to_json(result)


def plot_script(csv_path):
    """Standalone gnuplot script drawing stability against f from the figure CSV."""
    cols = ["f"] + [c for c in experiments.FIGURE1_COLUMNS if c != "f"] + ["status"]
    idx = {c: i + 1 for i, c in enumerate(cols)}
    curves = ("stab_pois", "stab_byz", "lb_pois", "ub_pois", "ub_byz_empirical")
    plots = ", \\\n     ".join(
        f"'{csv_path}' using {idx['f']}:{idx[c]} with linespoints title '{c}'" for c in curves)
    return (
        "# gnuplot script: stability against number of misbehaving workers\n"
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        "set key left top\n"
        "set xlabel 'f'\n"
        "set ylabel 'uniform stability'\n"
        "set logscale y\n"
        f"plot {plots}\n"
    )


def write_output(cfg, result, stream):
    text = render(result, cfg.format)
    if cfg.output_path is None:
        stream.write(text)
        return
    path = Path(cfg.output_path)
    path.write_text(text)
    if cfg.emit_plot_script:
        path.with_suffix(".gp").write_text(plot_script(path.name))


# ---------------------------------------------------------------- entry point


def build_parser():
    p = argparse.ArgumentParser(prog="robust-agg-lab",
                                description="Stability experiments for robust distributed gradient methods.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", metavar="PATH", help="key = value configuration file")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], help="override one config key")
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int)
    p.add_argument("--f-range", metavar="A..B")
    p.add_argument("--suite", metavar="NAME", help="comma-separated suite names: " + ", ".join(SUITES))
    p.add_argument("--emit-plot-script", action="store_true")
    return p


def config_from_args(args):
    raw = {}
    if args.config:
        try:
            raw.update(parse_config_text(Path(args.config).read_text()))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {args.config!r}: {exc}") from None
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip()] = v.strip()
    flags = {"out": args.out, "format": args.format, "seed": args.seed, "seeds": args.seeds,
             "f_range": args.f_range, "suite": args.suite}
    raw.update({k: v for k, v in flags.items() if v is not None})
    if args.emit_plot_script:
        raw["emit_plot_script"] = True
    return build_config(args.command, raw)


def execute(cfg, stream=None):
    """Run one configured command, write its output and return the result dictionary."""
    stream = sys.stdout if stream is None else stream
    if cfg.command == "verify":
        report, failed = cmd_verify(cfg, stream)
        if cfg.output_path is not None:
            write_output(cfg, report, stream)
        if failed:
            first = failed[0]
            raise PropertyViolation(f"suite {first.name} failed {first.failures}/{first.cases} cases",
                                    witness=first.witness)
        return report
    handler = {"figure1": cmd_figure1, "bounds": cmd_bounds, "run": cmd_run,
               "counterexample": cmd_counterexample}[cfg.command]
    result = handler(cfg)
    write_output(cfg, result, stream)
    return result


def main(argv=None, stream=None, err=None):
    err = sys.stderr if err is None else err
    args = build_parser().parse_args(argv)
    try:
        execute(config_from_args(args), stream)
    except LabError as exc:
        print(f"error: {exc}", file=err)
        witness = getattr(exc, "witness", None)
        if witness is not None:
            print(f"witness: {witness!r}", file=err)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
