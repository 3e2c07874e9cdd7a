import numpy as np
import pytest

from leafgeom import model_zoo as mz
from leafgeom.errors import BadParameters, UnknownModel


@pytest.mark.parametrize("model", mz.MODEL_IDS)
def test_oracle_battery(model):
    rep = mz.oracle_check(mz.build(model))
    assert rep.passed, [(c.name, c.observed, c.error) for c in rep.failures]


def test_unknown_model():
    with pytest.raises(UnknownModel):
        mz.build("klein_bottle")


def test_bad_parameters():
    with pytest.raises(BadParameters):
        mz.build("hyperbolic_product", {"K": -1.0})
    with pytest.raises(BadParameters):
        mz.build("hyperbolic_product", {"colour": 3})


def test_flags():
    assert mz.build("hyperbolic_product").satisfies_assumptions
    assert mz.build("sphere_product").transverse_K is None
    assert not mz.build("horosphere_h3").minimal_leaves
    assert not mz.build("perturbed_product").bundle_like


def test_parameterised_hyperbolic():
    spec = mz.build("hyperbolic_product", {"d": 3, "K": 4.0, "m": 2})
    assert (spec.d_H, spec.d_V, spec.transverse_K) == (3, 2, 4.0)
    seed = spec.default_seed_point
    q = seed.copy()
    q[2] = np.exp(1.0)       # straight up from the seed: distance log(q_y / s_y) / sqrt(K)
    assert float(spec.distance_fn(seed)(q)) == pytest.approx(0.5, rel=1e-12)


def test_leaf_parameterisation():
    spec = mz.build("sol")
    y = spec.leaf_point([0.0, 0.0, 0.3], [1.0, -2.0])
    assert np.allclose(y, [1.0, -2.0, 0.3])
    assert np.allclose(spec.leaf_params(y), [1.0, -2.0])
