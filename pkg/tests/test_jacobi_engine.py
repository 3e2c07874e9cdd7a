import numpy as np
import pytest

from leafgeom import geodesic_flow as gf
from leafgeom import jacobi_engine as je
from leafgeom import model_zoo as mz
from leafgeom.errors import DivisionNearZero
from leafgeom.metric_core import adapted_frame


def _unit_dir(spec, p, c):
    c = np.asarray(c, float)
    return adapted_frame(spec.chart, p).horizontal @ (c / np.linalg.norm(c))


def test_shooting_jacobian_matches_finite_differences(heisenberg):
    chart, seed = heisenberg.chart, heisenberg.default_seed_point
    s, h = np.array([0.3]), np.array([0.9, -0.4])
    _, J = je.shooting_system(chart, seed, s, h, 1e-12)
    z = np.concatenate([s, h])
    eps = 1e-5
    cols = []
    for i in range(len(z)):
        e = np.zeros(len(z))
        e[i] = eps
        fp = gf._endpoint(chart, seed, (z + e)[:1], (z + e)[1:], 1e-12)
        fm = gf._endpoint(chart, seed, (z - e)[:1], (z - e)[1:], 1e-12)
        cols.append((fp - fm) / (2 * eps))
    assert np.allclose(J, np.array(cols).T, atol=1e-8)


def test_exp_differential_horizontal_variation(heisenberg):
    chart, y = heisenberg.chart, heisenberg.default_seed_point
    u = _unit_dir(heisenberg, y, [1.0, 0.5]) * 1.3
    w = _unit_dir(heisenberg, y, [-0.5, 1.0])
    dx = je.exp_differential(chart, y, u, np.zeros(3), w).components
    eps = 1e-5
    fd = (gf.normal_exp(chart, y, u + eps * w, 1e-12) - gf.normal_exp(chart, y, u - eps * w, 1e-12)) / (2 * eps)
    assert np.allclose(dx, fd, atol=1e-8)


def test_jacobi_field_grows_like_cosh(hyperbolic):
    p = hyperbolic.default_seed_point
    u = _unit_dir(hyperbolic, p, [1.0, 0.0])
    path = gf.integrate_geodesic(hyperbolic.chart, p, u, 3.0, 1e-12)
    X = _unit_dir(hyperbolic, p, [0.0, 1.0])
    field = je.integrate_jacobi(path, X, np.zeros(3))
    for t, vh in zip(field.ts, field.V_h):
        assert np.linalg.norm(vh) == pytest.approx(np.cosh(t), rel=1e-8)
    # a vertical start stays vertical and constant on a product
    field = je.integrate_jacobi(path, np.array([0.0, 0.0, 1.0]), np.zeros(3))
    assert np.allclose(np.linalg.norm(field.V_v, axis=1), 1.0, atol=1e-10)
    assert np.allclose(field.V_h, 0.0, atol=1e-10)


def test_sphere_focal_point_at_pi(sphere):
    p = sphere.default_seed_point
    u = adapted_frame(sphere.chart, p).horizontal[:, -1]
    path = gf.integrate_geodesic(sphere.chart, p, u, 0.1)
    rep = je.detect_focal(path, 4.0)
    assert rep.focal_times[0] == pytest.approx(np.pi, abs=1e-6)


@pytest.mark.parametrize("model", ["hyperbolic_product", "heisenberg"])
def test_no_focal_points(model):
    spec = mz.build(model)
    p = spec.default_seed_point
    path = gf.integrate_geodesic(spec.chart, p, _unit_dir(spec, p, [0.3, 1.0]), 0.1)
    assert je.detect_focal(path, 15.0).empty


@pytest.mark.parametrize("rho", [0.5, 2.0])
def test_hessian_coth_on_hyperbolic_product(hyperbolic, rho):
    y = hyperbolic.default_seed_point
    target = gf.normal_exp(hyperbolic.chart, y, rho * _unit_dir(hyperbolic, y, [0.6, 0.8]))
    hr = je.hessian_at(hyperbolic.chart, y, target)
    X = hr.frame[:, 1]
    assert hr.value(X) == pytest.approx(1 / np.tanh(rho), abs=1e-8)
    assert abs(hr.value(hr.frame[:, 2])) < 1e-10
    assert hr.trace == pytest.approx(1 / np.tanh(rho), abs=1e-8)
    # the ratio along the BVP field is coth(t) on the equality model
    assert je.riccati_ratio(hr, X, 0.7 * rho) == pytest.approx(1 / np.tanh(0.7 * rho), abs=1e-7)
    with pytest.raises(DivisionNearZero):
        je.riccati_ratio(hr, X, 0.0)


def test_hessian_heisenberg_is_flat_transversally(heisenberg):
    y = heisenberg.default_seed_point
    target = gf.normal_exp(heisenberg.chart, y, 1.7 * _unit_dir(heisenberg, y, [1.0, 2.0]))
    hr = je.hessian_at(heisenberg.chart, y, target)
    assert hr.value(hr.frame[:, 1]) == pytest.approx(1 / 1.7, abs=1e-8)
