"""Small dense linear algebra and subset combinatorics.

Everything here works on tiny matrices (d <= 24) and is written for
clarity. Eigenvalues use closed forms for d <= 2 and cyclic Jacobi
rotations above that; the batched variants process a whole stack of
covariance matrices at once, which is what the exhaustive aggregation
rules need.
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np

from .errors import CapacityError, ValidationError

MAX_WORKERS = 24
SYMMETRY_TOL = 1e-10
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class CovarianceStats:
    mean: np.ndarray
    trace: float
    lambda_max: float


def as_vectors(vectors):
    """Stack a list of equal-length vectors into an ``(n, d)`` float array."""
    try:
        arr = np.asarray(vectors, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"vectors must form a rectangular numeric array: {exc}") from None
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValidationError(f"expected a non-empty list of vectors, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("vectors contain non-finite entries")
    return arr


def validate_subset(subset, n):
    idx = tuple(int(i) for i in subset)
    if not idx:
        raise ValidationError("subset must be non-empty")
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise ValidationError(f"subset indices must be strictly increasing: {idx}")
    if idx[0] < 0 or idx[-1] >= n:
        raise ValidationError(f"subset {idx} out of range for n={n}")
    return idx


def _check_symmetric_stack(mats):
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2] or mats.shape[1] == 0:
        raise ValidationError(f"expected square matrices, got shape {mats.shape}")
    if not np.all(np.isfinite(mats)):
        raise ValidationError("matrix contains non-finite entries")
    asym = np.abs(mats - np.swapaxes(mats, 1, 2)).max(initial=0.0)
    scale = max(1.0, np.abs(mats).max(initial=0.0))
    if asym > SYMMETRY_TOL * scale:
        raise ValidationError(f"matrix is not symmetric (max asymmetry {asym:.3g})")


def jacobi_eigenvalues(mats):
    """Eigenvalues of a stack of symmetric matrices by cyclic Jacobi sweeps.

    ``mats`` has shape ``(B, d, d)``; returns ``(B, d)`` unsorted eigenvalues.
    Sweeps stop once every off-diagonal Frobenius norm is below
    ``JACOBI_TOL`` times the matrix norm, or after ``JACOBI_MAX_SWEEPS``.
    """
    a = np.array(mats, dtype=float, copy=True)
    a = 0.5 * (a + np.swapaxes(a, 1, 2))
    d = a.shape[1]
    scale = np.sqrt(np.einsum("bij,bij->b", a, a))
    scale = np.where(scale > 0, scale, 1.0)
    off_mask = ~np.eye(d, dtype=bool)
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.sqrt(np.sum(a[:, off_mask] ** 2, axis=1))
        if np.all(off <= JACOBI_TOL * scale):
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[:, p, q]
                app = a[:, p, p]
                aqq = a[:, q, q]
                nz = apq != 0.0
                safe_apq = np.where(nz, apq, 1.0)
                tau = (aqq - app) / (2.0 * safe_apq)
                t = np.sign(tau) / (np.abs(tau) + np.hypot(1.0, tau))
                t = np.where(tau == 0.0, 1.0, t)
                t = np.where(nz, t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                c = c[:, None]
                s = s[:, None]
                col_p = a[:, :, p].copy()
                col_q = a[:, :, q].copy()
                a[:, :, p] = c * col_p - s * col_q
                a[:, :, q] = s * col_p + c * col_q
                row_p = a[:, p, :].copy()
                row_q = a[:, q, :].copy()
                a[:, p, :] = c * row_p - s * row_q
                a[:, q, :] = s * row_p + c * row_q
    return np.diagonal(a, axis1=1, axis2=2).copy()


def max_eigenvalues_sym(mats, validate=True):
    """Largest eigenvalue of each matrix in a ``(B, d, d)`` symmetric stack."""
    mats = np.asarray(mats, dtype=float)
    if validate:
        _check_symmetric_stack(mats)
    d = mats.shape[1]
    if d == 1:
        return mats[:, 0, 0].copy()
    if d == 2:
        a = mats[:, 0, 0]
        c = mats[:, 1, 1]
        b = 0.5 * (mats[:, 0, 1] + mats[:, 1, 0])
        return 0.5 * (a + c) + np.hypot(0.5 * (a - c), b)
    return jacobi_eigenvalues(mats).max(axis=1)


def max_eigenvalue_sym(matrix):
    """Largest eigenvalue of one symmetric matrix."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise ValidationError(f"expected a square matrix, got shape {m.shape}")
    return float(max_eigenvalues_sym(m[None])[0])


def covariance_stats(vectors, subset):
    """Mean, trace and top eigenvalue of the 1/|S|-normalised covariance of ``vectors[subset]``."""
    g = as_vectors(vectors)
    idx = validate_subset(subset, g.shape[0])
    sub = g[list(idx)]
    mean = sub.mean(axis=0)
    centred = sub - mean
    cov = centred.T @ centred / len(idx)
    trace = float(np.trace(cov))
    lam = max_eigenvalue_sym(cov)
    # rounding can leave a zero eigenvalue at -1e-17
    return CovarianceStats(mean=mean, trace=max(trace, 0.0), lambda_max=max(lam, 0.0))


def _check_capacity(n, k):
    if n > MAX_WORKERS:
        raise CapacityError(
            f"exhaustive subset enumeration supports n <= {MAX_WORKERS} workers, got n={n}"
        )
    if not 0 < k <= n:
        raise ValidationError(f"subset size must satisfy 0 < k <= n, got k={k}, n={n}")


def enumerate_subsets(n, k):
    """Yield every size-``k`` subset of ``range(n)`` in lexicographic order."""
    _check_capacity(n, k)
    yield from combinations(range(n), k)


@lru_cache(maxsize=64)
def subset_table(n, k):
    """All size-``k`` subsets as a read-only ``(C(n, k), k)`` index array, lexicographic rows."""
    _check_capacity(n, k)
    table = np.fromiter(
        (i for s in combinations(range(n), k) for i in s), dtype=np.intp, count=comb(n, k) * k
    ).reshape(comb(n, k), k)
    table.flags.writeable = False
    return table


@lru_cache(maxsize=64)
def subset_indicator(n, k):
    """``(C(n, k), n)`` 0/1 matrix whose rows mark the members of each subset."""
    table = subset_table(n, k)
    ind = np.zeros((table.shape[0], n))
    np.put_along_axis(ind, table, 1.0, axis=1)
    ind.flags.writeable = False
    return ind


@dataclass(frozen=True)
class SubsetScan:
    """Covariance statistics of every size-k subset, rows in lexicographic order."""

    table: np.ndarray
    means: np.ndarray
    traces: np.ndarray
    lambda_max: np.ndarray


def scan_subsets_many(batches, k):
    """Subset statistics for a stack of batches ``(R, n, d)``; arrays gain a leading R axis.

    Subset moments come from one indicator-matrix product on vectors
    centred at each batch mean, which keeps cancellation at the level of
    the batch spread.
    """
    g = np.asarray(batches, dtype=float)
    if g.ndim != 3 or 0 in g.shape:
        raise ValidationError(f"expected a non-empty (R, n, d) stack, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise ValidationError("vectors contain non-finite entries")
    R, n, d = g.shape
    table = subset_table(n, k)
    ind = subset_indicator(n, k)
    centre = g.mean(axis=1, keepdims=True)
    c = g - centre
    outer = (c[:, :, :, None] * c[:, :, None, :]).reshape(R, n, d * d)
    m = np.matmul(ind, c) / k
    second = np.matmul(ind, outer).reshape(R, -1, d, d) / k
    covs = second - m[..., :, None] * m[..., None, :]
    traces = np.maximum(np.einsum("rsii->rs", covs), 0.0)
    lam = max_eigenvalues_sym(covs.reshape(-1, d, d), validate=False).reshape(R, -1)
    return SubsetScan(table=table, means=m + centre, traces=traces, lambda_max=np.maximum(lam, 0.0))


def scan_subsets(vectors, k):
    """Mean, trace and top eigenvalue of the covariance of every size-``k`` subset."""
    g = as_vectors(vectors)
    many = scan_subsets_many(g[None], k)
    return SubsetScan(table=many.table, means=many.means[0], traces=many.traces[0],
                      lambda_max=many.lambda_max[0])
