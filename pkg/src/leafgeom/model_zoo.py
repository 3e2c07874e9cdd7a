"""Model foliated charts with closed-form ground truth.

Every model is a single coordinate chart whose leaves are coordinate slices:
the coordinates listed in ``leaf_coords`` move along a leaf, the others are
frozen.  Hyperbolic factors use the upper half-space model so one chart holds
arbitrarily large tubes around the reference leaf.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import jax.numpy as jnp
import numpy as np

from . import connection_calculus as cc
from .errors import BadParameters, GeometryError, UnknownModel
from .metric_core import ANALYTIC, FoliatedChart, adapted_frame, check_bundle_like, sample_interior

MODEL_IDS = ("euclidean_product", "hyperbolic_product", "heisenberg", "sol", "sphere_product",
             "horosphere_h3", "perturbed_product")


@dataclass(frozen=True)
class ModelSpec:
    """A zoo model: chart, leaf parameterisation, assumption flags and oracles.

    ``transverse_K`` is the constant K of the transverse bound ``<= -K`` when the
    bound holds, and ``None`` when it is violated.  ``distance_fn(seed)`` returns
    a JAX-traceable closed form of the distance to the leaf through ``seed``
    where one is known.
    """

    id: str
    params: dict
    chart: FoliatedChart
    leaf_coords: tuple
    bundle_like: bool
    minimal_leaves: bool
    transverse_K: Optional[float]
    simply_connected_leaf_space: bool
    oracles: dict = field(default_factory=dict)
    distance_fn: Optional[Callable] = None
    default_seed_point: Optional[np.ndarray] = None

    @property
    def d_H(self) -> int:
        return self.chart.dim_horizontal

    @property
    def d_V(self) -> int:
        return self.chart.dim_vertical

    @property
    def satisfies_assumptions(self) -> bool:
        return (self.bundle_like and self.transverse_K is not None
                and self.simply_connected_leaf_space)

    def leaf_point(self, seed, s):
        """Point of the leaf through ``seed`` with leaf coordinates ``s``."""
        y = np.array(seed, dtype=float)
        y[list(self.leaf_coords)] = s
        return y

    def leaf_params(self, point):
        return np.asarray(point, dtype=float)[list(self.leaf_coords)].copy()

    def transverse_coords(self):
        return tuple(i for i in range(self.chart.dim_total) if i not in self.leaf_coords)


def _unit_columns(dim, idx):
    Z = np.zeros((dim, len(idx)))
    for a, i in enumerate(idx):
        Z[i, a] = 1.0
    Zj = jnp.asarray(Z)
    return lambda p: Zj


def _euclidean_product(d_H=2, m=1, mode=ANALYTIC):
    d_H, m = int(d_H), int(m)
    if d_H < 1 or m < 1:
        raise BadParameters("euclidean_product needs d_H >= 1 and m >= 1")
    dim = d_H + m
    vert = tuple(range(d_H, dim))
    chart = FoliatedChart(lambda p: jnp.eye(dim) + 0.0 * p[0], _unit_columns(dim, vert), d_H, m,
                          np.full(dim, -1e4), np.full(dim, 1e4), derivative_mode=mode, leaf_coords=vert,
                          name="euclidean_product", reference_point=np.zeros(dim),
                          sampling_box=(np.full(dim, -2.0), np.full(dim, 2.0)))

    def dist(seed):
        s = jnp.asarray(seed)[:d_H]
        return lambda q: jnp.sqrt(jnp.sum((q[:d_H] - s) ** 2))

    return ModelSpec("euclidean_product", {"d_H": d_H, "m": m}, chart, vert, True, True, 0.0, True,
                     {"transverse_curvature": 0.0, "torsion_zero": True, "c_zero": True,
                      "mean_curvature_norm": 0.0, "lc_sectional": 0.0},
                     dist, np.zeros(dim))


def _hyperbolic_product(d=2, K=1.0, m=1, r_max=50.0, mode=ANALYTIC):
    d, m, K = int(d), int(m), float(K)
    if d < 2 or m < 1 or K <= 0:
        raise BadParameters("hyperbolic_product needs d >= 2, m >= 1, K > 0")
    dim = d + m
    yi = d - 1
    sk = np.sqrt(K)
    span = float(np.exp(3.0 * sk * r_max))

    def metric(p):
        conf = 1.0 / (K * p[yi] ** 2)
        return jnp.diag(jnp.concatenate([jnp.full(d, conf), jnp.ones(m)]))

    lower = np.concatenate([np.full(d - 1, -span), [1.0 / span], np.full(m, -1e4)])
    upper = np.concatenate([np.full(d - 1, span), [span], np.full(m, 1e4)])
    ref = np.zeros(dim)
    ref[yi] = 1.0
    box = (np.concatenate([np.full(d - 1, -1.0), [0.5], np.full(m, -1.0)]),
           np.concatenate([np.full(d - 1, 1.0), [2.0], np.full(m, 1.0)]))
    vert = tuple(range(d, dim))
    chart = FoliatedChart(metric, _unit_columns(dim, vert), d, m, lower, upper, derivative_mode=mode, leaf_coords=vert,
                          name="hyperbolic_product", reference_point=ref, sampling_box=box)

    def dist(seed):
        s = jnp.asarray(seed)

        def r(q):
            num = jnp.sum((q[:d] - s[:d]) ** 2)
            return jnp.arccosh(1.0 + num / (2.0 * q[yi] * s[yi])) / sk

        return r

    return ModelSpec("hyperbolic_product", {"d": d, "K": K, "m": m, "r_max": r_max}, chart, vert,
                     True, True, K, True,
                     {"transverse_curvature": -K, "torsion_zero": True, "c_zero": True,
                      "mean_curvature_norm": 0.0, "lc_sectional": -K},
                     dist, ref)


def _heisenberg(mode=ANALYTIC):
    def metric(p):
        theta = jnp.array([p[1] / 2.0, -p[0] / 2.0, 1.0])
        return jnp.diag(jnp.array([1.0, 1.0, 0.0])) + jnp.outer(theta, theta)

    chart = FoliatedChart(metric, _unit_columns(3, (2,)), 2, 1, np.full(3, -1e4), np.full(3, 1e4),
                          derivative_mode=mode, leaf_coords=(2,), name="heisenberg", reference_point=np.zeros(3),
                          sampling_box=(np.full(3, -2.0), np.full(3, 2.0)))

    def dist(seed):
        s = jnp.asarray(seed)
        return lambda q: jnp.sqrt((q[0] - s[0]) ** 2 + (q[1] - s[1]) ** 2)

    return ModelSpec("heisenberg", {}, chart, (2,), True, True, 0.0, True,
                     {"transverse_curvature": 0.0, "torsion_zero": False, "c_zero": True,
                      "mean_curvature_norm": 0.0, "lc_sectional": -0.75,
                      "torsion_XY": "-Z"},
                     dist, np.zeros(3))


def _sol(mode=ANALYTIC):
    def metric(p):
        return jnp.diag(jnp.array([jnp.exp(2 * p[2]), jnp.exp(-2 * p[2]), 1.0]))

    chart = FoliatedChart(metric, _unit_columns(3, (0, 1)), 1, 2,
                          np.array([-1e4, -1e4, -40.0]), np.array([1e4, 1e4, 40.0]),
                          derivative_mode=mode, leaf_coords=(0, 1), name="sol", reference_point=np.zeros(3),
                          sampling_box=(np.full(3, -1.0), np.full(3, 1.0)))

    def dist(seed):
        s = jnp.asarray(seed)
        return lambda q: jnp.abs(q[2] - s[2])

    return ModelSpec("sol", {}, chart, (0, 1), True, True, 0.0, True,
                     {"torsion_zero": False, "c_zero": False, "mean_curvature_norm": 0.0},
                     dist, np.zeros(3))


def _sphere_product(K=1.0, m=1, mode=ANALYTIC):
    K, m = float(K), int(m)
    if K <= 0 or m < 1:
        raise BadParameters("sphere_product needs K > 0 and m >= 1")
    dim = 2 + m

    def metric(p):
        conf = 4.0 / (1.0 + K * (p[0] ** 2 + p[1] ** 2)) ** 2
        return jnp.diag(jnp.concatenate([jnp.full(2, conf), jnp.ones(m)]))

    ref = np.zeros(dim)
    ref[0] = 1.0 / np.sqrt(K)
    vert = tuple(range(2, dim))
    chart = FoliatedChart(metric, _unit_columns(dim, vert), 2, m, np.full(dim, -1e3),
                          np.full(dim, 1e3), derivative_mode=mode, leaf_coords=vert, name="sphere_product",
                          reference_point=ref,
                          sampling_box=(np.full(dim, -1.0), np.full(dim, 1.0)))
    return ModelSpec("sphere_product", {"K": K, "m": m}, chart, vert, True, True, None, True,
                     {"transverse_curvature": K, "torsion_zero": True, "c_zero": True,
                      "mean_curvature_norm": 0.0, "lc_sectional": K,
                      "first_focal_time": float(np.pi / np.sqrt(K))},
                     None, ref)


def _horosphere_h3(mode=ANALYTIC):
    def metric(p):
        return jnp.eye(3) / p[2] ** 2

    span = float(np.exp(60.0))
    chart = FoliatedChart(metric, _unit_columns(3, (0, 1)), 1, 2,
                          np.array([-span, -span, 1.0 / span]), np.array([span, span, span]),
                          derivative_mode=mode, leaf_coords=(0, 1), name="horosphere_h3",
                          reference_point=np.array([0.0, 0.0, 1.0]),
                          sampling_box=(np.array([-1.0, -1.0, 0.5]), np.array([1.0, 1.0, 2.0])))

    def dist(seed):
        s = jnp.asarray(seed)
        return lambda q: jnp.abs(jnp.log(q[2] / s[2]))

    return ModelSpec("horosphere_h3", {}, chart, (0, 1), True, False, 0.0, True,
                     {"torsion_zero": False, "c_zero": False, "mean_curvature_norm": 2.0},
                     dist, np.array([0.0, 0.0, 1.0]))


def _perturbed_product(mode=ANALYTIC):
    def metric(p):
        conf = 1.0 / p[1] ** 2
        return jnp.diag(jnp.array([conf * (1.0 + p[2] ** 2), conf, 1.0]))

    chart = FoliatedChart(metric, _unit_columns(3, (2,)), 2, 1, np.array([-1e3, 1e-3, -1e3]),
                          np.array([1e3, 1e3, 1e3]), derivative_mode=mode, leaf_coords=(2,),
                          name="perturbed_product", reference_point=np.array([0.0, 1.0, 0.0]),
                          sampling_box=(np.array([-1.0, 0.5, -1.0]), np.array([1.0, 2.0, 1.0])))
    return ModelSpec("perturbed_product", {}, chart, (2,), False, True, None, True,
                     {"designated_points": [[0.0, 1.0, 1.0], [0.3, 1.5, -1.0]],
                      "bundle_like_residual": "2|z|/(1+z^2)"},
                     None, np.array([0.0, 1.0, 0.0]))


_BUILDERS = {
    "euclidean_product": _euclidean_product,
    "hyperbolic_product": _hyperbolic_product,
    "heisenberg": _heisenberg,
    "sol": _sol,
    "sphere_product": _sphere_product,
    "horosphere_h3": _horosphere_h3,
    "perturbed_product": _perturbed_product,
}

_CACHE: dict = {}


def build(model_id: str, params: Optional[dict] = None, derivative_mode=ANALYTIC) -> ModelSpec:
    """Build (and memoise) a zoo model.

    >>> build("hyperbolic_product", {"d": 2, "K": 1.0, "m": 1}).transverse_K
    1.0
    """
    if model_id not in _BUILDERS:
        raise UnknownModel(f"unknown model {model_id!r}; choose from {', '.join(MODEL_IDS)}")
    params = dict(params or {})
    key = (model_id, tuple(sorted(params.items())), derivative_mode)
    if key not in _CACHE:
        try:
            _CACHE[key] = _BUILDERS[model_id](mode=derivative_mode, **params)
        except TypeError as exc:
            raise BadParameters(f"bad parameters for {model_id}: {exc}") from None
    return _CACHE[key]


# ---------------------------------------------------------------------------
# oracle battery
# ---------------------------------------------------------------------------

DEFAULT_TOLERANCES = {
    "identities": 1e-7,
    "bundle_like": 1e-10,
    "bundle_like_violation": 0.1,
    "mean_curvature": 1e-9,
    "curvature": 1e-7,
    "tensor_zero": 1e-9,
    "distance": 1e-6,
    "focal_time": 1e-4,
    "samples": 20,
    "seed": 0,
}


GENERAL_IDENTITIES = ("torsion_vertical", "torsion_routes", "j_skew", "curvature_antisym",
                      "block_preservation", "lc_torsion_free")


@dataclass
class OracleCheck:
    name: str
    expected: object
    observed: object
    tolerance: float
    passed: bool
    error: str = ""


@dataclass
class OracleReport:
    model: str
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self):
        return [c for c in self.checks if not c.passed]

    def get(self, name) -> OracleCheck:
        return next(c for c in self.checks if c.name == name)


def _max_over(points, fn):
    return float(max(fn(p) for p in points))


def _run_checks(spec, tol, rng, points):
    chart = spec.chart
    o = spec.oracles
    checks = []

    def add(name, expected, observed, tolerance, passed):
        checks.append(OracleCheck(name, expected, observed, tolerance, bool(passed)))

    rep = cc.verify_structure_identities(chart, points=points, seed=tol["seed"])
    if spec.bundle_like:
        add("structure_identities", 0.0, rep.worst, tol["identities"], rep.worst < tol["identities"])
    else:
        # metric compatibility of the adapted connection needs a bundle-like metric
        general = max(rep.max_residuals[k] for k in GENERAL_IDENTITIES)
        add("structure_identities_general", 0.0, general, tol["identities"], general < tol["identities"])
        lost = rep.max_residuals["nabla_metric"]
        add("nabla_metric_lost", f"> {tol['bundle_like_violation']}", lost, tol["bundle_like_violation"],
            lost > tol["bundle_like_violation"])

    if spec.bundle_like:
        bl = check_bundle_like(chart, sample_points=points, tol=tol["bundle_like"])
        add("bundle_like", 0.0, bl.max_residual, tol["bundle_like"], bl.passed)
    else:
        pts = o.get("designated_points", points)
        bl = check_bundle_like(chart, sample_points=pts, tol=tol["bundle_like"])
        worst = float(np.min(bl.residuals))
        add("bundle_like_violation", f"> {tol['bundle_like_violation']}", worst,
            tol["bundle_like_violation"], worst > tol["bundle_like_violation"])

    hn = _max_over(points, lambda p: chart.norm(p, cc.mean_curvature(chart, p).components))
    if "mean_curvature_norm" in o:
        expected = o["mean_curvature_norm"]
        add("mean_curvature_norm", expected, hn, tol["mean_curvature"] if expected == 0 else tol["distance"],
            abs(hn - expected) < (tol["mean_curvature"] if expected == 0 else tol["distance"]))
    add("minimal_leaves_flag", spec.minimal_leaves, hn < tol["mean_curvature"], 0.0,
        (hn < tol["mean_curvature"]) == spec.minimal_leaves)

    tor = _max_over(points, lambda p: float(np.max(np.abs(cc.torsion_tensor(chart, p)))))
    if "torsion_zero" in o:
        add("torsion_zero", o["torsion_zero"], tor < tol["tensor_zero"], tol["tensor_zero"],
            (tor < tol["tensor_zero"]) == o["torsion_zero"])
    cmax = _max_over(points, lambda p: float(np.max(np.abs(cc.c_tensor_coefficients(chart, p)))))
    if "c_zero" in o:
        add("c_zero", o["c_zero"], cmax < tol["tensor_zero"], tol["tensor_zero"],
            (cmax < tol["tensor_zero"]) == o["c_zero"])

    if spec.d_H >= 2:
        pairs = [(p, cc.random_horizontal_pair(chart, p, rng)) for p in points]
        sec = np.array([cc.transverse_sectional(chart, p, X, Y) for p, (X, Y) in pairs])
        lc = np.array([cc.sectional_lc(chart, p, X, Y) for p, (X, Y) in pairs])
        one = max(abs(cc.oneill_check(chart, p, X, Y)) for p, (X, Y) in pairs)
        add("oneill", 0.0, float(one), tol["curvature"], one < tol["curvature"])
        if "transverse_curvature" in o:
            err = float(np.max(np.abs(sec - o["transverse_curvature"])))
            add("transverse_curvature", o["transverse_curvature"], float(sec.mean()), tol["curvature"],
                err < tol["curvature"])
        if "lc_sectional" in o:
            err = float(np.max(np.abs(lc - o["lc_sectional"])))
            add("lc_sectional", o["lc_sectional"], float(lc.mean()), tol["curvature"], err < tol["curvature"])
        if spec.transverse_K is not None:
            worst = float(sec.max() + spec.transverse_K)
            add("transverse_bound", f"<= {-spec.transverse_K}", float(sec.max()), tol["curvature"],
                worst < tol["curvature"])
        else:
            add("transverse_bound_violated", True, float(sec.max()), 0.0, True)

    if spec.distance_fn is not None and spec.bundle_like:
        from .geodesic_flow import normal_exp

        seed = np.asarray(spec.default_seed_point, float)
        r_fn = spec.distance_fn(jnp.asarray(seed))
        worst = 0.0
        for k in range(3):
            y = spec.leaf_point(seed, spec.leaf_params(points[k]))
            d = rng.standard_normal(spec.d_H)
            r = 0.5 + 1.5 * rng.random()
            target = normal_exp(chart, y, adapted_frame(chart, y).horizontal @ (r * d / np.linalg.norm(d)))
            worst = max(worst, abs(float(r_fn(jnp.asarray(target))) - r))
        add("distance_oracle", 0.0, worst, tol["distance"], worst < tol["distance"])

    if "first_focal_time" in o:
        from .geodesic_flow import integrate_geodesic
        from .jacobi_engine import detect_focal

        p = np.asarray(spec.default_seed_point, float)
        u = adapted_frame(chart, p).horizontal[:, -1]
        path = integrate_geodesic(chart, p, u, 0.1)
        t_exp = o["first_focal_time"]
        rep = detect_focal(path, t_exp + 0.5)
        first = rep.focal_times[0] if rep.focal_times else float("nan")
        add("first_focal_time", t_exp, first, tol["focal_time"], abs(first - t_exp) < tol["focal_time"])
    return checks


def oracle_check(spec: ModelSpec, tolerances: Optional[dict] = None) -> OracleReport:
    """Run the verification battery on ``spec`` and compare with its oracle pack.

    Mismatches and numerical errors are recorded in the report; nothing is raised.
    """
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    rng = np.random.default_rng(tol["seed"])
    points = sample_interior(spec.chart, int(tol["samples"]), rng)
    try:
        checks = _run_checks(spec, tol, rng, points)
    except (GeometryError, ValueError, np.linalg.LinAlgError) as exc:
        checks = [OracleCheck("battery", "completed", type(exc).__name__, 0.0, False, str(exc))]
    return OracleReport(spec.id, checks)
