import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leafgeom import connection_calculus as cc
from leafgeom import model_zoo as mz
from leafgeom.errors import NotHorizontal, NotOrthonormal
from leafgeom.metric_core import adapted_frame


def _heis_pair(p):
    x, y = p[0], p[1]
    return np.array([1.0, 0.0, -y / 2]), np.array([0.0, 1.0, x / 2])


def test_christoffel_upper_half_plane(hyperbolic):
    y = 0.7
    G = cc.christoffel(hyperbolic.chart, np.array([0.1, y, 0.0]))
    expected = np.zeros((3, 3, 3))
    expected[0, 0, 1] = expected[0, 1, 0] = -1 / y
    expected[1, 0, 0] = 1 / y
    expected[1, 1, 1] = -1 / y
    assert np.allclose(G, expected, atol=1e-13)


@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_heisenberg_torsion_and_curvatures(x, y, z):
    chart = mz.build("heisenberg").chart
    p = np.array([x, y, z])
    X, Y = _heis_pair(p)
    tor = cc.torsion(chart, p, X, Y).components
    assert np.allclose(tor, [0.0, 0.0, -1.0], atol=1e-12)
    assert cc.sectional_lc(chart, p, X, Y) == pytest.approx(-0.75, abs=1e-12)
    assert cc.transverse_sectional(chart, p, X, Y) == pytest.approx(0.0, abs=1e-12)
    assert abs(cc.oneill_check(chart, p, X, Y)) < 1e-12


def test_j_map_is_skew(heisenberg, rng):
    p = np.array([0.4, -0.3, 0.2])
    chart = heisenberg.chart
    M = cc.j_matrix(chart, p, np.array([0.0, 0.0, 1.0]))
    g = chart.g(p)
    assert np.allclose(g @ M + (g @ M).T, 0.0, atol=1e-12)
    X = rng.normal(size=3)
    assert np.allclose(cc.j_map(chart, p, [0, 0, 1.0], X).components, M @ X, atol=1e-12)


def test_hyperbolic_sectional(hyperbolic):
    p = np.array([0.3, 1.2, 0.4])
    EH = adapted_frame(hyperbolic.chart, p).horizontal
    X, Y = EH[:, 0], EH[:, 1]
    assert cc.transverse_sectional(hyperbolic.chart, p, X, Y) == pytest.approx(-1.0, abs=1e-12)
    assert cc.sectional_lc(hyperbolic.chart, p, X, Y) == pytest.approx(-1.0, abs=1e-12)


def test_curvature_inputs_validated(hyperbolic):
    p = np.array([0.0, 1.0, 0.0])
    with pytest.raises(NotHorizontal):
        cc.transverse_sectional(hyperbolic.chart, p, [1.0, 0, 0], [0, 0, 1.0])
    with pytest.raises(NotOrthonormal):
        cc.transverse_sectional(hyperbolic.chart, p, [2.0, 0, 0], [0, 1.0, 0])


@pytest.mark.parametrize("model,norm", [("horosphere_h3", 2.0), ("sol", 0.0), ("heisenberg", 0.0),
                                        ("hyperbolic_product", 0.0)])
def test_mean_curvature_norm(model, norm):
    spec = mz.build(model)
    for p in ([0.1, 0.6, 0.8], [0.5, 1.3, 1.7]):
        p = np.array(p)
        H = cc.mean_curvature(spec.chart, p)
        assert spec.chart.norm(p, H.components) == pytest.approx(norm, abs=1e-9)


def test_horosphere_mean_curvature_vector():
    chart = mz.build("horosphere_h3").chart
    p = np.array([0.0, 0.0, 0.5])
    # unit leaf fields z d_x, z d_y give D_Z Z = z d_z each
    H = cc.mean_curvature(chart, p).components
    assert np.allclose(H, [0.0, 0.0, 2 * 0.5], atol=1e-12)


def test_sol_has_nonzero_c_and_torsion():
    chart = mz.build("sol").chart
    p = np.array([0.2, -0.1, 0.3])
    assert np.max(np.abs(cc.c_tensor_coefficients(chart, p))) > 0.1
    assert np.max(np.abs(cc.torsion_tensor(chart, p))) > 0.1


@pytest.mark.parametrize("model", ["heisenberg", "hyperbolic_product", "sol", "euclidean_product"])
def test_identity_battery(model):
    rep = cc.verify_structure_identities(mz.build(model).chart, sample_count=20, seed=3)
    assert rep.passed(1e-7), rep.max_residuals
