"""Horizontal geodesics, the normal exponential map of a leaf, and its inverse.

Geodesics are integrated from the Levi-Civita Christoffel ODE.  The inverse of
the normal exponential map is found by damped Newton iteration over the leaf
coordinates of the foot point and the horizontal components of the initial
velocity; the Newton Jacobian comes from F-Jacobi fields
(:func:`leafgeom.jacobi_engine.shooting_system`).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import jax.numpy as jnp
import numpy as np
from scipy.stats import qmc

from . import connection_calculus as cc
from .errors import LeftDomain, NoConvergence, NotHorizontal, StepFailure
from .integrator import OdeSolution, make_stepper, solve
from .metric_core import FoliatedChart, SplitVector, _as_vec, adapted_frame, project

DEFAULT_TOL = 1e-10
SHOOT_TOL = 1e-12
HORIZONTAL_TOL = 1e-8


def _geodesic_stepper(chart):
    st = getattr(chart, "_geo_stepper", None)
    if st is None:
        d = chart.dim_total

        def rhs(t, y):
            x, v = y[:d], y[d:]
            return jnp.concatenate([v, -jnp.einsum("kij,i,j->k", cc._christoffel(chart, x), v, v)])

        st = make_stepper(rhs)
        chart._geo_stepper = st
    return st


def interior_guard(chart, d=None):
    d = chart.dim_total if d is None else d
    lo, hi = chart.lower, chart.upper
    return lambda y: bool(np.all(y[:d] > lo) and np.all(y[:d] < hi))


@dataclass
class GeodesicPath:
    """Dense geodesic ``t -> (position, velocity)`` with Hermite interpolation."""

    chart: FoliatedChart
    solution: OdeSolution
    tolerance: float

    @property
    def ts(self):
        return self.solution.ts

    @property
    def positions(self):
        return self.solution.ys[:, :self.chart.dim_total]

    @property
    def velocities(self):
        return self.solution.ys[:, self.chart.dim_total:]

    @property
    def t_end(self):
        return float(self.solution.ts[-1])

    def state(self, t):
        y = self.solution(t)
        d = self.chart.dim_total
        return y[:d], y[d:]

    def position(self, t):
        return self.state(t)[0]

    def velocity(self, t):
        return self.state(t)[1]

    def speeds(self):
        return np.array([self.chart.norm(x, v) for x, v in zip(self.positions, self.velocities)])

    def vertical_drift(self):
        return np.array([self.chart.norm(x, project(self.chart, x, v).v_part)
                         for x, v in zip(self.positions, self.velocities)])

    def speed_drift(self):
        s = self.speeds()
        return np.abs(s - s[0])

    def rows(self):
        """Export rows ``(t, x..., v..., vertical_drift, speed_drift)``."""
        vd, sd = self.vertical_drift(), self.speed_drift()
        return [(float(t), *map(float, x), *map(float, v), float(a), float(b))
                for t, x, v, a, b in zip(self.ts, self.positions, self.velocities, vd, sd)]


def integrate_geodesic(chart, p, u, t_end, tol=DEFAULT_TOL) -> GeodesicPath:
    """Riemannian geodesic from ``p`` with initial velocity ``u`` on ``[0, t_end]``."""
    chart.check_point(p)
    u = _as_vec(u)
    if not np.any(u):
        raise ValueError("initial velocity must be non-zero")
    y0 = np.concatenate([np.asarray(p, float), u])
    sol = solve(_geodesic_stepper(chart), 0.0, float(t_end), y0, rtol=tol, atol=tol,
                inside=interior_guard(chart))
    return GeodesicPath(chart, sol, tol)


def _require_horizontal(chart, y, u, tol=HORIZONTAL_TOL):
    sv = project(chart, y, u)
    if chart.norm(y, sv.v_part) > tol * max(1.0, chart.norm(y, u)):
        raise NotHorizontal(f"initial vector has vertical part of norm {chart.norm(y, sv.v_part):.3e}")
    return sv


def normal_exp(chart, y, u, tol=DEFAULT_TOL):
    """End point at time 1 of the geodesic from ``y`` with horizontal velocity ``u``."""
    u = _as_vec(u)
    _require_horizontal(chart, y, u)
    if not np.any(u):
        return np.asarray(y, dtype=float).copy()
    return integrate_geodesic(chart, y, u, 1.0, tol).position(1.0)


@dataclass
class ShootingResult:
    """Foot point, initial horizontal velocity and arc length reaching ``target``."""

    base: np.ndarray
    u: SplitVector
    rho: float
    iterations: int
    residual: float
    leaf_params: np.ndarray
    h_components: np.ndarray
    target: np.ndarray
    starts: int = 1
    jacobian: Optional[np.ndarray] = None  # set only when evaluated at the solution

    @property
    def direction(self):
        return self.u.components / self.rho if self.rho > 0 else np.zeros_like(self.u.components)


def segment_length(chart, a, b, nodes=32):
    """Metric length of the coordinate segment from ``a`` to ``b``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    x, w = np.polynomial.legendre.leggauss(nodes)
    d = b - a
    return float(sum(0.5 * wi * chart.norm(a + 0.5 * (xi + 1) * d, d) for xi, wi in zip(x, w)))


def _initial_guess(chart, leaf_seed, target):
    """Foot point with the target's leaf coordinates; direction from the coordinate difference.

    The length is capped by the metric length of the coordinate segment, an
    upper bound for the distance.
    """
    target = np.asarray(target, float)
    s0 = target[list(chart.leaf_coords)]
    y0 = chart.leaf_point(leaf_seed, s0)
    EH = adapted_frame(chart, y0).horizontal
    h0 = EH.T @ chart.g(y0) @ (target - y0)
    nh = float(np.linalg.norm(h0))
    if nh > 0:
        h0 *= min(1.0, segment_length(chart, y0, target) / nh)
    return s0, h0


def _trust_region(delta, s, h, m):
    """Limit a Newton step to ``max(1, |h|)`` in the horizontal components."""
    dh = np.linalg.norm(delta[m:])
    cap = max(1.0, float(np.linalg.norm(h)))
    return delta * (cap / dh) if dh > cap else delta


def _endpoint(chart, leaf_seed, s, h, tol):
    """``exp(y(s), E_H h)`` from the geodesic ODE alone."""
    y = chart.leaf_point(leaf_seed, s)
    u = adapted_frame(chart, y).horizontal @ h
    if not np.any(u):
        return y
    return integrate_geodesic(chart, y, u, 1.0, tol).solution.ys[-1][:chart.dim_total]


CHORD_CONTRACTION = 0.25


def _newton(chart, leaf_seed, target, s, h, max_iter, tol, int_tol, J=None, max_halvings=8):
    """Damped Newton iteration with Broyden updates between exact Jacobians.

    Trial points are evaluated with the geodesic ODE only.  The F-Jacobi
    Jacobian is recomputed whenever the residual contracts by less than
    ``CHORD_CONTRACTION`` or the line search fails with an updated Jacobian.
    """
    from .jacobi_engine import shooting_system

    g_t = chart.g(target)
    gnorm = lambda r: float(np.sqrt(max(r @ g_t @ r, 0.0)))
    fresh = J is None
    if fresh:
        end, J = shooting_system(chart, leaf_seed, s, h, int_tol)
    else:
        end = _endpoint(chart, leaf_seed, s, h, int_tol)
    res = end - target
    rn = gnorm(res)
    m = len(s)
    it = 0
    while it < max_iter:
        if rn < tol:
            return s, h, it, rn, J if fresh else None
        it += 1
        try:
            delta = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError:
            raise NoConvergence(it, rn, "singular shooting Jacobian") from None
        delta = _trust_region(delta, s, h, m)
        lam = 1.0
        for _ in range(max_halvings + 1):
            s_try, h_try = s + lam * delta[:m], h + lam * delta[m:]
            try:
                r_try = _endpoint(chart, leaf_seed, s_try, h_try, int_tol) - target
            except (LeftDomain, StepFailure):
                lam *= 0.5
                continue
            if gnorm(r_try) < rn:
                break
            lam *= 0.5
        else:
            if fresh:
                raise NoConvergence(it, rn, "line search failed")
            _, J = shooting_system(chart, leaf_seed, s, h, int_tol)
            fresh = True
            continue
        step = np.concatenate([s_try - s, h_try - h])
        # Broyden rank-one update of the reused Jacobian
        J = J + np.outer(r_try - res - J @ step, step) / (step @ step)
        s, h, res = s_try, h_try, r_try
        rn_new = gnorm(res)
        slow = rn_new > CHORD_CONTRACTION * rn
        rn = rn_new
        fresh = False
        if slow and rn >= tol:
            _, J = shooting_system(chart, leaf_seed, s, h, int_tol)
            fresh = True
    if rn < tol:
        return s, h, it, rn, J if fresh else None
    raise NoConvergence(max_iter, rn)


def _sphere_directions(n, count=16):
    if n == 1:
        return [np.array([1.0]), np.array([-1.0])]
    if n == 2:
        ang = 2 * np.pi * np.arange(count) / count
        return [np.array([np.cos(a), np.sin(a)]) for a in ang]
    pts = qmc.Halton(d=n, scramble=False).random(count + 1)[1:]
    dirs = []
    for q in pts:
        v = np.tan(np.pi * (q - 0.5) * 0.98)
        dirs.append(v / np.linalg.norm(v))
    return dirs


def invert_normal_exp(chart, leaf_seed, target, init=None, max_iter=20, tol=1e-10,
                      int_tol=SHOOT_TOL) -> ShootingResult:
    """Solve ``normal_exp(y, u) = target`` with ``y`` on the leaf through ``leaf_seed``.

    ``init`` is an optional ``(leaf_params, h_components)`` pair, optionally
    followed by a shooting Jacobian to reuse.  When the first Newton run fails,
    a deterministic set of 16 start directions is tried.
    """
    target = np.asarray(target, dtype=float)
    chart.require_interior(target)
    J0 = None
    if init is None:
        s0, h0 = _initial_guess(chart, leaf_seed, target)
    else:
        s0, h0 = (np.asarray(a, dtype=float) for a in init[:2])
        J0 = init[2] if len(init) > 2 else None
    starts = [(s0, h0)]
    rho0 = max(float(np.linalg.norm(h0)), 1e-3)
    for dvec in _sphere_directions(chart.dim_horizontal):
        starts.append((s0, rho0 * dvec))
    last = None
    total_iters = 0
    for k, (s, h) in enumerate(starts):
        try:
            s, h, iters, rn, J = _newton(chart, leaf_seed, target, s, h, max_iter, tol, int_tol,
                                         J=J0 if k == 0 else None)
        except (NoConvergence, LeftDomain, StepFailure) as exc:
            last = exc
            total_iters += getattr(exc, "max_iter", 0) or 0
            continue
        y = chart.leaf_point(leaf_seed, s)
        EH = adapted_frame(chart, y).horizontal
        u = project(chart, y, EH @ h)
        return ShootingResult(y, u, float(np.linalg.norm(h)), iters, rn, s, h, target, k + 1, J)
    if isinstance(last, NoConvergence):
        raise last
    raise NoConvergence(max_iter, message=f"all {len(starts)} starts failed ({last})")


def distance_to_leaf(chart, leaf_seed, target, **kw) -> float:
    """Distance from ``target`` to the leaf through ``leaf_seed``."""
    target = np.asarray(target, dtype=float)
    y = chart.leaf_point(leaf_seed, target[list(chart.leaf_coords)])
    if np.allclose(y, target, rtol=0, atol=1e-14):
        return 0.0
    return invert_normal_exp(chart, leaf_seed, target, **kw).rho
