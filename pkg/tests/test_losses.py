import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robust_agg_lab.errors import ValidationError
from robust_agg_lab.losses import (
    LossModel, ProjectionDomain, finite_diff_gradient, gradients, huberized_regression, linear1d, loss_gradient,
    loss_value, make_point, project, quadratic_mean, squared_regression, values,
)

unit = st.floats(-1, 1, allow_nan=False)


def test_linear_and_quadratic_values():
    lin = linear1d(C=2.0)
    assert loss_value(lin, [3.0], make_point(-1.5)) == pytest.approx(-4.5)
    np.testing.assert_allclose(loss_gradient(lin, [3.0], make_point(-1.5)), [-1.5])
    q = quadratic_mean(C=1.0, mu=2.0)
    assert loss_value(q, [0.25], make_point(-0.25)) == pytest.approx(0.25)
    np.testing.assert_allclose(loss_gradient(q, [0.25], make_point(-0.25)), [1.0])


def test_huberized_branches_and_continuity():
    h = huberized_regression(C=1.0, L=1.0)
    x = np.array([0.6, 0.8])
    # quadratic branch: |r| ||x|| <= C
    pt = make_point(x=x, y=0.5)
    assert loss_value(h, [0.0, 0.0], pt) == pytest.approx(0.125)
    # linear branch: value C(|r|/||x|| - C/(2||x||^2))
    far = make_point(x=x, y=3.0)
    assert loss_value(h, [0.0, 0.0], far) == pytest.approx(3.0 - 0.5)
    np.testing.assert_allclose(loss_gradient(h, [0.0, 0.0], far), -x)
    # the two branches meet at |r| = C/||x||
    eps = 1e-9
    below = values(h, np.zeros(2), make_point(x=x, y=1.0 - eps))
    above = values(h, np.zeros(2), make_point(x=x, y=1.0 + eps))
    assert above - below == pytest.approx(2 * eps, rel=1e-3)


@given(st.tuples(unit, unit), st.tuples(unit, unit), st.floats(-3, 3))
@settings(max_examples=100, deadline=None)
def test_gradients_match_finite_differences(theta, x, y):
    x = 0.9 * np.array(x) / max(1.0, np.linalg.norm(x))
    pt = make_point(x=x, y=y)
    theta = np.array(theta)
    for model in (huberized_regression(C=1.0, L=1.0), squared_regression(L=1.0)):
        r = x @ theta - y
        # skip the kink of the huberized loss
        if model.family == "huberized_regression" and abs(abs(r) * np.linalg.norm(x) - 1.0) < 1e-3:
            continue
        np.testing.assert_allclose(gradients(model, theta, pt), finite_diff_gradient(model, theta, pt),
                                   atol=1e-6)


@given(unit, st.floats(-0.5, 0.5))
def test_scalar_gradients_match_finite_differences(theta, z):
    for model in (linear1d(), quadratic_mean(C=1.0, mu=1.0)):
        np.testing.assert_allclose(gradients(model, [theta], [z]), finite_diff_gradient(model, [theta], [z]),
                                   atol=1e-7)


def test_huberized_is_lipschitz_and_smooth():
    rng = np.random.default_rng(0)
    h = huberized_regression(C=1.0, L=2.0)
    x = rng.normal(size=(400, 3))
    x *= (np.sqrt(2.0) * rng.uniform(0, 1, size=(400, 1))) / np.linalg.norm(x, axis=1, keepdims=True)
    pts = np.column_stack([x, rng.normal(size=400) * 3])
    th1, th2 = rng.normal(size=3), rng.normal(size=3)
    g1, g2 = gradients(h, th1, pts), gradients(h, th2, pts)
    assert np.all(np.linalg.norm(g1, axis=1) <= h.C + 1e-12)
    assert np.all(np.linalg.norm(g1 - g2, axis=1) <= h.L * np.linalg.norm(th1 - th2) + 1e-12)


def test_batched_theta_broadcasts():
    h = huberized_regression()
    pts = np.array([[0.6, 0.8, 0.5], [0.0, 1.0, -2.0]])
    thetas = np.array([[0.0, 0.0], [1.0, -1.0]])
    batched = gradients(h, thetas[:, None, :], pts[None])
    for i in range(2):
        np.testing.assert_allclose(batched[i], gradients(h, thetas[i], pts))


def test_domain_validation():
    with pytest.raises(ValidationError):
        loss_value(linear1d(C=1.0), [0.0], make_point(2.0))
    with pytest.raises(ValidationError):
        loss_value(quadratic_mean(C=1.0, mu=1.0), [0.0], make_point(0.6))
    with pytest.raises(ValidationError):
        loss_value(quadratic_mean(C=1.0, mu=1.0), [2.0], make_point(0.1))
    with pytest.raises(ValidationError):
        loss_value(huberized_regression(L=1.0), [0.0, 0.0], make_point(x=[1.0, 1.0], y=0.0))
    with pytest.raises(ValidationError):
        LossModel("cubic", C=1.0, L=1.0)
    with pytest.raises(ValidationError):
        quadratic_mean(C=1.0, mu=2.0, L=1.0)
    with pytest.raises(ValidationError):
        make_point(x=[1.0])


def test_squared_regression_flagged_non_lipschitz():
    assert not squared_regression().lipschitz
    assert huberized_regression().lipschitz


@given(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), st.tuples(st.floats(-5, 5), st.floats(-5, 5)))
@settings(max_examples=100, deadline=None)
def test_projections_are_idempotent_and_nonexpansive(a, b):
    a, b = np.array(a), np.array(b)
    for dom in (ProjectionDomain.ball(1.5), ProjectionDomain.ray([1.0, 2.0])):
        pa, pb = project(dom, a), project(dom, b)
        np.testing.assert_allclose(project(dom, pa), pa, atol=1e-12)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12


def test_projection_against_grid_search():
    rng = np.random.default_rng(1)
    v = np.array([1.0, 2.0])
    ray_pts = np.linspace(0, 5, 50001)[:, None] * v
    for _ in range(20):
        th = rng.normal(size=2) * 3
        best = ray_pts[np.argmin(np.linalg.norm(ray_pts - th, axis=1))]
        np.testing.assert_allclose(project(ProjectionDomain.ray(v), th), best, atol=1e-3)
    np.testing.assert_allclose(project(ProjectionDomain.ball(1.0), [3.0, 4.0]), [0.6, 0.8])
    np.testing.assert_allclose(project(None, [3.0, 4.0]), [3.0, 4.0])
