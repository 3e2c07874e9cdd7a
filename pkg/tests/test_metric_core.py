import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leafgeom import model_zoo as mz
from leafgeom.errors import DegenerateMetric, OutsideDomain, SingularVerticalFrame
from leafgeom.metric_core import (FINITE_DIFFERENCE, FoliatedChart, adapted_frame, check_bundle_like,
                                  gram_schmidt_adapted, project, sample_interior, volume_density)

coords = st.floats(-1.0, 1.0)


@given(coords, coords, coords)
def test_heisenberg_frame_is_orthonormal_and_adapted(x, y, z):
    spec = mz.build("heisenberg")
    p = np.array([x, y, z])
    f = adapted_frame(spec.chart, p)
    g = spec.chart.g(p)
    assert np.allclose(f.vectors.T @ g @ f.vectors, np.eye(3), atol=1e-12)
    # vertical columns span the leaf direction
    Z = spec.chart.Z(p)
    assert abs(abs(f.vertical[:, 0] @ g @ Z[:, 0]) - np.sqrt(Z[:, 0] @ g @ Z[:, 0])) < 1e-12
    assert np.allclose(f.horizontal.T @ g @ Z, 0.0, atol=1e-12)


def test_gram_schmidt_on_random_spd(rng):
    A = rng.normal(size=(4, 4))
    g = A @ A.T + 4 * np.eye(4)
    Z = rng.normal(size=(4, 2))
    E = np.asarray(gram_schmidt_adapted(jnp.asarray(g), jnp.asarray(Z), (0, 1)))
    assert np.allclose(E.T @ g @ E, np.eye(4), atol=1e-12)
    assert np.allclose(E[:, :2].T @ g @ Z, 0.0, atol=1e-12)


def test_project_splits_orthogonally(hyperbolic, rng):
    p = np.array([0.2, 1.3, 0.1])
    u = rng.normal(size=3)
    sv = project(hyperbolic.chart, p, u)
    g = hyperbolic.chart.g(p)
    assert np.allclose(sv.h_part + sv.v_part, u)
    assert abs(sv.h_part @ g @ sv.v_part) < 1e-14


def test_volume_density_upper_half_plane(hyperbolic):
    p = np.array([0.0, 0.5, 0.0])
    assert volume_density(hyperbolic.chart, p) == pytest.approx(1 / 0.25, rel=1e-14)


def test_outside_domain_raises(hyperbolic):
    with pytest.raises(OutsideDomain):
        hyperbolic.chart.check_point(np.array([0.0, -1.0, 0.0]))


def test_degenerate_metric_raises():
    chart = FoliatedChart(lambda p: jnp.diag(jnp.array([1.0, p[1], 1.0])),
                          lambda p: jnp.array([[0.0], [0.0], [1.0]]) + 0 * p[0], 2, 1,
                          [-1, -1, -1], [1, 1, 1], reference_point=[0.0, 0.5, 0.0])
    with pytest.raises(DegenerateMetric):
        chart.check_point(np.array([0.0, -0.5, 0.0]))


def test_vertical_frame_degeneracy_raises():
    chart = FoliatedChart(lambda p: jnp.eye(3) + 0 * p[0],
                          lambda p: jnp.array([[0.0], [0.0], [p[0]]]), 2, 1,
                          [-1, -1, -1], [1, 1, 1], reference_point=[0.5, 0.0, 0.0])
    with pytest.raises(SingularVerticalFrame):
        chart.check_point(np.array([0.0, 0.0, 0.0]))


def test_finite_difference_mode_matches_analytic(hyperbolic):
    fd = hyperbolic.chart.with_derivative_mode(FINITE_DIFFERENCE, 1e-5)
    p = np.array([0.3, 0.8, -0.2])
    assert np.allclose(fd.dg(p), hyperbolic.chart.dg(p), atol=1e-8)


@pytest.mark.parametrize("model", ["euclidean_product", "hyperbolic_product", "heisenberg", "sol",
                                   "horosphere_h3"])
def test_bundle_like_models(model):
    assert check_bundle_like(mz.build(model).chart, sample_count=20).passed


def test_perturbed_product_is_not_bundle_like():
    chart = mz.build("perturbed_product").chart
    rep = check_bundle_like(chart, sample_points=[[0.0, 1.0, 1.0]])
    # residual 2|z|/(1+z^2) at z = 1
    assert rep.max_residual == pytest.approx(1.0, rel=1e-10)
    assert not rep.passed


def test_sample_interior_stays_in_box(hyperbolic, rng):
    pts = sample_interior(hyperbolic.chart, 100, rng)
    lo, hi = hyperbolic.chart.sampling_box
    assert np.all(pts >= lo) and np.all(pts <= hi)
