"""Aggregation rules: plain mean, coordinate-wise trimmed mean, SMEA.

All rules take an ``(n, d)`` batch (one row per worker) and return an
:class:`AggregationOutcome`. SMEA and the robustness certificate scan
every subset of size ``n - f`` exhaustively, so they are limited to
``n <= 24``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ValidationError
from .linalg import SubsetScan, as_vectors, scan_subsets, scan_subsets_many

# Relative slack on rhs - lhs when certifying the robustness inequality.
CERT_RTOL = 1e-9
# Candidates within this relative distance of the minimum count as tied.
TIE_RTOL = 1e-12

RULES = ("mean", "cwtm", "smea")


@dataclass(frozen=True)
class AggregationOutcome:
    aggregate: np.ndarray
    selected: Optional[tuple] = None
    selected_lambda_max: Optional[float] = None


@dataclass(frozen=True)
class RobustnessSpec:
    f: int
    kappa: float
    norm: str = "spectral"

    def __post_init__(self):
        if self.f < 0:
            raise ValidationError(f"f must be non-negative, got {self.f}")
        if not self.kappa >= 0:
            raise ValidationError(f"kappa must be non-negative, got {self.kappa}")
        if self.norm not in ("trace", "spectral"):
            raise ValidationError(f"norm must be 'trace' or 'spectral', got {self.norm!r}")


@dataclass(frozen=True)
class RobustnessCertificate:
    passed: bool
    worst_slack: float
    worst_subset: tuple
    lhs: float
    rhs: float


def _check_f(n, f):
    if not (isinstance(f, (int, np.integer)) and 0 <= f and 2 * f < n):
        raise ValidationError(f"need 0 <= f < n/2, got f={f}, n={n}")


def aggregate_mean(batch):
    g = as_vectors(batch)
    return AggregationOutcome(aggregate=g.mean(axis=0))


def trimmed_mean(values, f):
    """Drop the ``f`` smallest and ``f`` largest scalars, average the rest.

    Works along axis 0, so a ``(n, d)`` array is trimmed per column. Ties
    are ordered by original index (stable sort).
    """
    x = np.asarray(values, dtype=float)
    n = x.shape[0]
    _check_f(n, f)
    order = np.argsort(x, axis=0, kind="stable")
    kept = np.take_along_axis(x, order[f:n - f], axis=0)
    return kept.mean(axis=0)


def aggregate_cwtm(batch, f):
    g = as_vectors(batch)
    return AggregationOutcome(aggregate=trimmed_mean(g, f))


def smea_select_many(batches, f):
    """Winning row of the subset table for each batch in an ``(R, n, d)`` stack, plus the scan.

    Rows whose top eigenvalue is within a rounding tolerance of the minimum
    count as tied and the first one in lexicographic order wins.
    """
    g = np.asarray(batches, dtype=float)
    n = g.shape[1]
    _check_f(n, f)
    scan = scan_subsets_many(g, n - f)
    lam = scan.lambda_max
    lam_min = lam.min(axis=1)
    spread2 = np.max(np.sum((g - g.mean(axis=1, keepdims=True)) ** 2, axis=2), axis=1)
    # moment sums carry absolute error of order eps * spread^2
    tol = TIE_RTOL * lam_min + 64 * np.finfo(float).eps * spread2
    winners = np.argmax(lam <= (lam_min + tol)[:, None], axis=1)
    return winners, scan


def smea_select(batch, f):
    """Index (into the lexicographic subset table) of the SMEA winner, plus the scan."""
    g = as_vectors(batch)
    winners, many = smea_select_many(g[None], f)
    scan = SubsetScan(table=many.table, means=many.means[0], traces=many.traces[0],
                      lambda_max=many.lambda_max[0])
    return int(winners[0]), scan


def aggregate_smea(batch, f):
    winner, scan = smea_select(batch, f)
    rows = scan.table[winner]
    return AggregationOutcome(
        aggregate=as_vectors(batch)[rows].mean(axis=0),
        selected=tuple(rows.tolist()),
        selected_lambda_max=float(scan.lambda_max[winner]),
    )


def aggregate_many(rule, batches, f):
    """Apply a rule to every batch of an ``(R, n, d)`` stack.

    Returns ``(aggregates, selected)`` where ``selected`` is an ``(R, n - f)``
    index array for SMEA and ``None`` otherwise.
    """
    g = np.asarray(batches, dtype=float)
    if rule == "mean":
        return g.mean(axis=1), None
    if rule == "cwtm":
        return trimmed_mean(np.swapaxes(g, 0, 1), f), None
    if rule == "smea":
        winners, scan = smea_select_many(g, f)
        rows = scan.table[winners]
        return np.take_along_axis(g, rows[:, :, None], axis=1).mean(axis=1), rows
    raise ValidationError(f"unknown aggregation rule {rule!r}; expected one of {RULES}")


def aggregate(rule, batch, f):
    if rule == "mean":
        return aggregate_mean(batch)
    if rule == "cwtm":
        return aggregate_cwtm(batch, f)
    if rule == "smea":
        return aggregate_smea(batch, f)
    raise ValidationError(f"unknown aggregation rule {rule!r}; expected one of {RULES}")


def kappa_smea(n, f):
    """Robustness coefficient of SMEA under the spectral norm."""
    _check_f(n, f)
    return 4.0 * f / (n - f) * (1.0 + f / (n - 2 * f)) ** 2


def kappa_cwtm(n, f):
    """Robustness coefficient of CWTM under the trace norm."""
    _check_f(n, f)
    return 6.0 * f / (n - 2 * f) * (1.0 + f / (n - 2 * f))


def check_robustness(batch, rule_output, spec):
    """Check ``||F - mean_S||^2 <= kappa ||Sigma_S||_op`` on every subset S of size n - f.

    Returns a certificate holding the worst slack ``min_S (rhs - lhs)``.
    A subset passes when ``lhs <= rhs + CERT_RTOL * max(rhs, floor)``,
    where the floor is the rounding level of the squared inputs.
    """
    g = as_vectors(batch)
    n = g.shape[0]
    _check_f(n, spec.f)
    out = np.asarray(rule_output, dtype=float).reshape(-1)
    if out.shape[0] != g.shape[1]:
        raise ValidationError(f"rule output has dim {out.shape[0]}, batch has dim {g.shape[1]}")
    scan = scan_subsets(g, n - spec.f)
    lhs = np.sum((scan.means - out) ** 2, axis=1)
    op = scan.traces if spec.norm == "trace" else scan.lambda_max
    rhs = spec.kappa * np.maximum(op, 0.0)
    slack = rhs - lhs
    scale2 = max(float(np.max(np.sum(g * g, axis=1))), float(out @ out), 1e-300)
    allowed = CERT_RTOL * np.maximum(rhs, np.finfo(float).eps * scale2)
    worst = int(np.argmin(slack + allowed))
    return RobustnessCertificate(
        passed=bool(np.all(slack >= -allowed)),
        worst_slack=float(slack.min()),
        worst_subset=tuple(int(i) for i in scan.table[worst]),
        lhs=float(lhs[worst]),
        rhs=float(rhs[worst]),
    )
