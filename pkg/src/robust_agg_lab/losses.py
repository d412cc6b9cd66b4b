"""Loss families used by the constructions, with exact gradients.

A data point is stored as a flat float array: ``[z]`` for the scalar
families (``linear1d``, ``quadratic_mean``) and ``[x_1, ..., x_d, y]``
for the regression families. Local datasets are ``(m, p)`` arrays of
such rows, so gradients of many points are computed in one call.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError

FAMILIES = ("linear1d", "quadratic_mean", "huberized_regression", "squared_regression")
SCALAR_FAMILIES = ("linear1d", "quadratic_mean")
_POINT_TOL = 1e-9


@dataclass(frozen=True)
class ProjectionDomain:
    kind: str = "none"
    radius: Optional[float] = None
    direction: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("none", "ball", "ray"):
            raise ValidationError(f"unknown domain kind {self.kind!r}")
        if self.kind == "ball" and not (self.radius is not None and self.radius > 0):
            raise ValidationError("ball domain needs a positive radius")
        if self.kind == "ray":
            v = None if self.direction is None else np.asarray(self.direction, dtype=float)
            if v is None or v.ndim != 1 or not np.any(v != 0):
                raise ValidationError("ray domain needs a non-zero direction vector")
            object.__setattr__(self, "direction", v)

    @classmethod
    def ball(cls, radius):
        return cls("ball", radius=float(radius))

    @classmethod
    def ray(cls, direction):
        return cls("ray", direction=np.asarray(direction, dtype=float))


@dataclass(frozen=True)
class LossModel:
    family: str
    C: float
    L: float
    mu: Optional[float] = None
    ell_inf: Optional[float] = None
    domain: Optional[ProjectionDomain] = field(default=None)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown loss family {self.family!r}; expected one of {FAMILIES}")
        if not (self.C > 0 and self.L > 0):
            raise ValidationError(f"C and L must be positive, got C={self.C}, L={self.L}")
        if self.family == "quadratic_mean" and self.mu is None:
            raise ValidationError("quadratic_mean needs mu")
        if self.mu is not None and not (0 < self.mu <= self.L):
            raise ValidationError(f"need 0 < mu <= L, got mu={self.mu}, L={self.L}")

    @property
    def lipschitz(self):
        """Whether the family is globally C-Lipschitz (squared regression is not)."""
        return self.family != "squared_regression"

    @property
    def convex(self):
        return True

    def point_dim(self, d):
        return 1 if self.family in SCALAR_FAMILIES else d + 1


def linear1d(C=1.0, L=1.0):
    return LossModel("linear1d", C=C, L=L)


def quadratic_mean(C=1.0, mu=1.0, L=None):
    L = mu if L is None else L
    return LossModel("quadratic_mean", C=C, L=L, mu=mu, domain=ProjectionDomain.ball(C / (2 * mu)))


def huberized_regression(C=1.0, L=1.0, domain=None):
    return LossModel("huberized_regression", C=C, L=L, domain=domain)


def squared_regression(L=1.0):
    # C is unused for this family; it is not globally Lipschitz
    return LossModel("squared_regression", C=1.0, L=L)


def make_point(z=None, x=None, y=None):
    """Build one data point row: ``make_point(z)`` or ``make_point(x=..., y=...)``."""
    if z is not None:
        return np.array([float(z)])
    if x is None or y is None:
        raise ValidationError("a data point needs either z or both x and y")
    return np.append(np.asarray(x, dtype=float).reshape(-1), float(y))


def as_points(model, points):
    pts = np.asarray(points, dtype=float)
    if model.family in SCALAR_FAMILIES and pts.ndim == 0:
        pts = pts.reshape(1)
    if pts.ndim == 0 or not np.all(np.isfinite(pts)):
        raise ValidationError("data points must be finite arrays")
    return pts


def validate_points(model, points):
    """Raise unless every row is inside the family's data domain."""
    pts = as_points(model, points)
    if model.family == "linear1d":
        bad = np.abs(pts[..., 0]) > model.C * (1 + _POINT_TOL)
        what = f"|z| <= C = {model.C}"
    elif model.family == "quadratic_mean":
        bad = np.abs(pts[..., 0]) > model.C / (2 * model.mu) * (1 + _POINT_TOL)
        what = f"|z| <= C/(2 mu) = {model.C / (2 * model.mu)}"
    else:
        xnorm = np.linalg.norm(pts[..., :-1], axis=-1)
        bad = xnorm > np.sqrt(model.L) * (1 + _POINT_TOL)
        what = f"||x|| <= sqrt(L) = {np.sqrt(model.L)}"
    if np.any(bad):
        raise ValidationError(f"data point outside the {model.family} domain: need {what}")
    return pts


def _theta(theta):
    return np.atleast_1d(np.asarray(theta, dtype=float))


def values(model, theta, points):
    """Loss of ``theta`` on every row of ``points`` (shape ``(..., p)`` -> ``(...)``).

    ``theta`` may carry leading axes that broadcast against those of ``points``.
    """
    th = _theta(theta)
    pts = as_points(model, points)
    if model.family == "linear1d":
        return pts[..., 0] * th[..., 0]
    if model.family == "quadratic_mean":
        return 0.5 * model.mu * (th[..., 0] - pts[..., 0]) ** 2
    x, y = pts[..., :-1], pts[..., -1]
    r = np.sum(x * th, axis=-1) - y
    if model.family == "squared_regression":
        return 0.5 * r**2
    xnorm = np.linalg.norm(x, axis=-1)
    quad = np.abs(r) * xnorm <= model.C
    if np.any(~quad & (xnorm == 0)):
        raise ValidationError("huberized loss with ||x|| = 0 outside the quadratic branch")
    safe = np.where(quad, 1.0, xnorm)
    return np.where(quad, 0.5 * r**2, model.C * (np.abs(r) / safe - model.C / (2 * safe**2)))


def gradients(model, theta, points):
    """Gradient at ``theta`` for every row of ``points`` (shape ``(..., p)`` -> ``(..., d)``).

    ``theta`` may carry leading axes that broadcast against those of ``points``.
    """
    th = _theta(theta)
    pts = as_points(model, points)
    if model.family == "linear1d":
        return pts[..., :1] + 0.0 * th[..., :1]
    if model.family == "quadratic_mean":
        return model.mu * (th[..., :1] - pts[..., :1])
    x, y = pts[..., :-1], pts[..., -1]
    r = np.sum(x * th, axis=-1) - y
    if model.family == "squared_regression":
        return r[..., None] * x
    xnorm = np.linalg.norm(x, axis=-1)
    # closed boundary: the quadratic branch owns the kink
    quad = np.abs(r) * xnorm <= model.C
    if np.any(~quad & (xnorm == 0)):
        raise ValidationError("huberized gradient with ||x|| = 0 outside the quadratic branch")
    safe = np.where(quad, 1.0, xnorm)
    scale = np.where(quad, r, model.C * np.sign(r) / safe)
    return scale[..., None] * x


def _check_theta(model, theta):
    dom = model.domain
    if dom is None or dom.kind == "none":
        return
    th = _theta(theta)
    if dom.kind == "ball" and np.linalg.norm(th) > dom.radius * (1 + _POINT_TOL) + _POINT_TOL:
        raise ValidationError(f"theta={th} outside the ball of radius {dom.radius}")


def loss_value(model, theta, z):
    _check_theta(model, theta)
    pts = validate_points(model, z)
    return float(values(model, theta, pts))


def loss_gradient(model, theta, z):
    _check_theta(model, theta)
    pts = validate_points(model, z)
    return gradients(model, theta, pts).reshape(-1)


def project(domain, theta):
    """Euclidean projection of ``theta`` onto the domain (identity for ``None``/``none``).

    Rows of a 2-D ``theta`` are projected independently.
    """
    th = _theta(theta)
    if domain is None or domain.kind == "none":
        return th.copy()
    if domain.kind == "ball":
        norm = np.linalg.norm(th, axis=-1, keepdims=True)
        scale = np.minimum(1.0, domain.radius / np.where(norm > 0, norm, 1.0))
        return th * scale
    v = domain.direction
    coef = np.maximum(0.0, (th @ v) / float(v @ v))
    return coef[..., None] * v


def finite_diff_gradient(model, theta, z, h=1e-5):
    """Central-difference gradient, one coordinate at a time."""
    if not h > 0:
        raise ValidationError("step h must be positive")
    th = _theta(theta)
    pts = as_points(model, z)
    grad = np.empty_like(th)
    for k in range(th.size):
        e = np.zeros_like(th)
        e[k] = h
        grad[k] = (float(values(model, th + e, pts)) - float(values(model, th - e, pts))) / (2 * h)
    return grad
