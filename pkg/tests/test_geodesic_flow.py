import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leafgeom import geodesic_flow as gf
from leafgeom import model_zoo as mz
from leafgeom.errors import LeftDomain, NotHorizontal, OutsideDomain
from leafgeom.metric_core import adapted_frame


def _closed_form(spec, q):
    return float(spec.distance_fn(spec.default_seed_point)(np.asarray(q)))


def test_hyperbolic_geodesic_is_unit_speed_and_horizontal(hyperbolic):
    p = hyperbolic.default_seed_point
    u = adapted_frame(hyperbolic.chart, p).horizontal @ np.array([0.6, 0.8])
    path = gf.integrate_geodesic(hyperbolic.chart, p, u, 10.0)
    assert path.vertical_drift().max() < 1e-8
    assert path.speed_drift().max() < 1e-8
    # distance from the starting leaf grows like t
    for t in (1.0, 4.0, 10.0):
        assert _closed_form(hyperbolic, path.position(t)) == pytest.approx(t, abs=1e-7)


def test_vertical_start_rejected(hyperbolic):
    with pytest.raises(NotHorizontal):
        gf.normal_exp(hyperbolic.chart, hyperbolic.default_seed_point, np.array([0.0, 0.0, 1.0]))


def test_leaving_chart_reports_exit_time():
    spec = mz.build("sphere_product")
    p = spec.default_seed_point
    # first frame vector runs to the stereographic pole, outside the box
    u = adapted_frame(spec.chart, p).horizontal[:, 0]
    with pytest.raises(LeftDomain) as exc:
        gf.integrate_geodesic(spec.chart, p, u, 10.0)
    assert 0.0 < exc.value.t_exit < 10.0


@given(st.floats(0.0, 2 * np.pi), st.floats(0.2, 2.5))
def test_heisenberg_shooting_roundtrip(angle, rho):
    spec = mz.build("heisenberg")
    y = spec.default_seed_point
    h = rho * np.array([np.cos(angle), np.sin(angle)])
    x = gf.normal_exp(spec.chart, y, adapted_frame(spec.chart, y).horizontal @ h)
    res = gf.invert_normal_exp(spec.chart, y, x)
    assert res.rho == pytest.approx(rho, abs=1e-8)
    assert res.rho == pytest.approx(_closed_form(spec, x), abs=1e-8)


@pytest.mark.parametrize("rho", [0.3, 2.0, 4.0])
def test_hyperbolic_distance_to_leaf(hyperbolic, rho):
    y = hyperbolic.default_seed_point
    u = adapted_frame(hyperbolic.chart, y).horizontal @ np.array([0.8, -0.6])
    x = gf.normal_exp(hyperbolic.chart, y, rho * u)
    assert gf.distance_to_leaf(hyperbolic.chart, y, x) == pytest.approx(rho, abs=1e-9)


def test_target_on_leaf(hyperbolic):
    y = hyperbolic.default_seed_point
    q = hyperbolic.leaf_point(y, [0.5])
    assert gf.distance_to_leaf(hyperbolic.chart, y, q) == pytest.approx(0.0, abs=1e-12)


def test_outside_target_rejected(hyperbolic):
    with pytest.raises(OutsideDomain):
        gf.invert_normal_exp(hyperbolic.chart, hyperbolic.default_seed_point, np.array([0.0, -1.0, 0.0]))


def test_segment_length(hyperbolic):
    # vertical segment x = 0 in the upper half plane has length log(b/a)
    a, b = np.array([0.0, 1.0, 0.0]), np.array([0.0, 3.0, 0.0])
    assert gf.segment_length(hyperbolic.chart, a, b) == pytest.approx(np.log(3.0), rel=1e-10)
