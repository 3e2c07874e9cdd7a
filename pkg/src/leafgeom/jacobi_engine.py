"""F-Jacobi fields along horizontal geodesics.

The geodesic, a nabla-parallel adapted frame ``F`` and any number of Jacobi
fields are co-integrated as one ODE.  Fields are stored as components in the
parallel frame, so ``nabla_{gamma'}`` is a plain time derivative and the
system reads

    cV' = -F_V^T g Tor(V, gamma'),   cH' = w,   w' = -F_H^T g R(V_H, gamma') gamma'.

The first horizontal frame vector is the unit tangent of the geodesic (it is
parallel because horizontal geodesics are nabla-straight).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import jax.numpy as jnp
import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import connection_calculus as cc
from .errors import DivisionNearZero, SingularBVP
from .geodesic_flow import (DEFAULT_TOL, GeodesicPath, integrate_geodesic, interior_guard,
                            invert_normal_exp)
from .integrator import OdeSolution, make_numpy_stepper, solve
from .metric_core import SplitVector, _as_vec, adapted_frame, project

MAX_GRID_STEP = 0.01
FOCAL_RATIO = 1e-6


def _jacobi_stepper(chart):
    st = getattr(chart, "_jac_stepper", None)
    if st is not None:
        return st
    d, n, m = chart.dim_total, chart.dim_horizontal, chart.dim_vertical
    width = m + 2 * n
    along = cc.kernels(chart).along

    def rhs(t, y):
        x, v = y[:d], y[d:2 * d]
        F = y[2 * d:2 * d + d * d].reshape(d, d)
        C = y[2 * d + d * d:].reshape(-1, width).T          # (width, k)
        buf = np.asarray(along(x, v))
        g, Av, Tv, Rvv = (buf[o:o + d * d].reshape(d, d) for o in (0, d * d + d, 2 * d * d + d,
                                                                   3 * d * d + d))
        Gvv = buf[d * d:d * d + d]
        FH, FV = F[:, :n], F[:, n:]
        cV, cH, w = C[:m], C[m:m + n], C[m + n:]
        VH = FH @ cH
        V = VH + FV @ cV
        dcV = -FV.T @ g @ (Tv @ V)
        dw = -FH.T @ g @ (Rvv @ VH)
        dC = np.concatenate([dcV, w, dw], axis=0).T.reshape(-1)
        return np.concatenate([v, -Gvv, (-Av @ F).reshape(-1), dC])

    st = make_numpy_stepper(rhs)
    chart._jac_stepper = st
    return st


def initial_frame(chart, p, u):
    """Adapted orthonormal frame at ``p`` whose first vector is ``u/|u|``."""
    frame = adapted_frame(chart, p)
    EH, EV = frame.horizontal, frame.vertical
    u = _as_vec(u)
    nu = chart.norm(p, u)
    if nu == 0.0:
        return frame.vectors.copy()
    c = EH.T @ chart.g(p) @ u / nu
    n = len(c)
    Q, _ = np.linalg.qr(np.column_stack([c, np.eye(n)]))
    Q = Q[:, :n]
    if Q[:, 0] @ c < 0:
        Q = -Q
    return np.column_stack([EH @ Q, EV])


@dataclass
class JacobiBundle:
    """Geodesic, parallel frame and ``k`` co-integrated F-Jacobi fields."""

    chart: object
    solution: OdeSolution
    k: int
    tolerance: float
    initial_data: np.ndarray = field(repr=False)

    def unpack(self, y):
        d, n, m = self.chart.dim_total, self.chart.dim_horizontal, self.chart.dim_vertical
        x, v = y[:d], y[d:2 * d]
        F = y[2 * d:2 * d + d * d].reshape(d, d)
        C = y[2 * d + d * d:].reshape(self.k, m + 2 * n).T
        return x, v, F, C[:m], C[m:m + n], C[m + n:]

    def at(self, t, exact=False):
        """``(x, v, F, cV, cH, w)`` at ``t``; ``exact`` re-integrates from the last step."""
        if not exact:
            return self.unpack(self.solution(t))
        i = self.solution.segment_start(t)
        t0 = self.solution.ts[i]
        if t == t0:
            return self.unpack(self.solution.ys[i])
        sol = solve(_jacobi_stepper(self.chart), t0, float(t), self.solution.ys[i],
                    rtol=self.tolerance, atol=self.tolerance)
        return self.unpack(sol.ys[-1])

    @property
    def ts(self):
        return self.solution.ts

    @property
    def geodesic(self) -> GeodesicPath:
        d = self.chart.dim_total
        sub = OdeSolution(self.solution.ts, self.solution.ys[:, :2 * d], self.solution.fs[:, :2 * d])
        return GeodesicPath(self.chart, sub, self.tolerance)

    def fields_at(self, t, exact=False):
        """Coordinate vectors ``(V, V_H, W)``, one column per field."""
        x, v, F, cV, cH, w = self.at(t, exact)
        n = self.chart.dim_horizontal
        VH = F[:, :n] @ cH
        return VH + F[:, n:] @ cV, VH, F[:, :n] @ w


def propagate(chart, p, u, t_end, data, tol=DEFAULT_TOL) -> JacobiBundle:
    """Co-integrate the geodesic ``(p, u)`` with fields given by frame components.

    ``data`` has shape ``(k, m + 2n)``: rows ``(cV, cH, w)`` relative to
    :func:`initial_frame`.
    """
    chart.check_point(p)
    data = np.atleast_2d(np.asarray(data, dtype=float))
    F0 = initial_frame(chart, p, u)
    y0 = np.concatenate([np.asarray(p, float), _as_vec(u), F0.reshape(-1), data.reshape(-1)])
    sol = solve(_jacobi_stepper(chart), 0.0, float(t_end), y0, rtol=tol, atol=tol,
                inside=interior_guard(chart))
    return JacobiBundle(chart, sol, data.shape[0], tol, data)


def _components(chart, p, F, vec):
    return F.T @ chart.g(p) @ _as_vec(vec)


@dataclass
class JacobiField:
    """One F-Jacobi field sampled at the integrator's accepted steps."""

    bundle: JacobiBundle
    ts: np.ndarray
    V_v: np.ndarray
    V_h: np.ndarray
    W: np.ndarray

    @property
    def geodesic(self):
        return self.bundle.geodesic

    def at(self, t):
        V, VH, W = self.bundle.fields_at(t)
        return V[:, 0], VH[:, 0], W[:, 0]

    def rows(self):
        return [(float(t), *map(float, a), *map(float, b), *map(float, c))
                for t, a, b, c in zip(self.ts, self.V_v, self.V_h, self.W)]


def _field_from_bundle(bundle, col=0):
    V_v, V_h, W = [], [], []
    for y in bundle.solution.ys:
        x, v, F, cV, cH, w = bundle.unpack(y)
        V_v.append(cV[:, col])
        V_h.append(cH[:, col])
        W.append(w[:, col])
    return JacobiField(bundle, bundle.ts, np.array(V_v), np.array(V_h), np.array(W))


def integrate_jacobi(geodesic: GeodesicPath, V0, W0, tol=None) -> JacobiField:
    """F-Jacobi field along ``geodesic`` with ``V(0) = V0`` and ``nabla V_H(0) = W0``.

    Components in the returned samples are taken in the parallel frame.
    """
    chart = geodesic.chart
    p, u = geodesic.state(0.0)
    F = initial_frame(chart, p, u)
    n = chart.dim_horizontal
    V0 = project(chart, p, V0)
    W0 = _as_vec(W0)
    row = np.concatenate([_components(chart, p, F, V0.v_part)[n:],
                          _components(chart, p, F, V0.h_part)[:n],
                          _components(chart, p, F, W0)[:n]])
    bundle = propagate(chart, p, u, geodesic.t_end, row[None, :], tol or geodesic.tolerance)
    return _field_from_bundle(bundle)


def exp_differential(chart, y, u, v_V, v_H, tol=DEFAULT_TOL) -> SplitVector:
    """``d exp_(y,u)(v) = V(1)`` with ``V(0) = v_V`` and ``nabla V(0) = v_H + Tor(u, v_V)``.

    The vertical part of the initial derivative is implied by the first
    F-Jacobi equation, so only ``v_H`` enters the initial data explicitly.
    """
    u = _as_vec(u)
    F = initial_frame(chart, y, u)
    n = chart.dim_horizontal
    row = np.concatenate([_components(chart, y, F, v_V)[n:], np.zeros(n),
                          _components(chart, y, F, v_H)[:n]])
    bundle = propagate(chart, y, u, 1.0, row[None, :], tol)
    V, _, _ = bundle.fields_at(1.0)
    return project(chart, bundle.geodesic.position(1.0), V[:, 0])


def shooting_system(chart, leaf_seed, s, h, tol):
    """End point of ``exp(y(s), E_H h)`` and its Jacobian in ``(s, h)``."""
    s, h = np.asarray(s, float), np.asarray(h, float)
    y = chart.leaf_point(leaf_seed, s)
    frame = adapted_frame(chart, y)
    EH = frame.horizontal
    u = EH @ h
    F = initial_frame(chart, y, u)
    n, m, d = chart.dim_horizontal, chart.dim_vertical, chart.dim_total
    g = chart.g(y)
    dE = chart.frame_derivatives(y)
    A = cc.nabla_coefficients(chart, y)
    rows = []
    for a in chart.leaf_coords:
        e = np.zeros(d)
        e[a] = 1.0
        # covariant derivative of u = E_H h along the leaf direction e
        nab_u = (np.einsum("iAk,k->iA", dE[:, :n, :], e) + np.einsum("kij,i,jA->kA", A, e, EH)) @ h
        rows.append(np.concatenate([(F.T @ g @ e)[n:], np.zeros(n), (F.T @ g @ nab_u)[:n]]))
    for i in range(n):
        rows.append(np.concatenate([np.zeros(m), np.zeros(n), (F.T @ g @ EH[:, i])[:n]]))
    bundle = propagate(chart, y, u, 1.0, np.array(rows), tol)
    x1 = bundle.solution.ys[-1][:d]
    V, _, _ = bundle.fields_at(1.0)
    return x1, V


# ---------------------------------------------------------------------------
# focal points, Hessian of the distance, Riccati ratio
# ---------------------------------------------------------------------------

def focal_basis_data(chart):
    """Initial data for fields with ``V_H(0) = 0``, tangential direction excluded."""
    n, m = chart.dim_horizontal, chart.dim_vertical
    rows = []
    for a in range(m):
        r = np.zeros(m + 2 * n)
        r[a] = 1.0
        rows.append(r)
    for i in range(1, n):
        r = np.zeros(m + 2 * n)
        r[m + n + i] = 1.0
        rows.append(r)
    return np.array(rows)


def focal_matrix(bundle, t, exact=False):
    """Columns: ``(cV, cH without the tangential component)`` of the basis fields."""
    _, _, _, cV, cH, _ = bundle.at(t, exact)
    return np.vstack([cV, cH[1:]])


@dataclass
class FocalCandidate:
    time: float
    sigma_min: float
    threshold: float
    focal: bool


@dataclass
class FocalReport:
    t_max: float
    grid_step: float
    grid_t: np.ndarray = field(repr=False)
    grid_sigma: np.ndarray = field(repr=False)
    candidates: list

    @property
    def focal_times(self):
        return [c.time for c in self.candidates if c.focal]

    @property
    def empty(self) -> bool:
        return not self.focal_times

    def rows(self):
        return [(float(t), float(s)) for t, s in zip(self.grid_t, self.grid_sigma)]


def _unit_start(geodesic):
    p, u = geodesic.state(0.0)
    speed = geodesic.chart.norm(p, u)
    return p, u / speed


def propagate_focal_basis(chart, p, u_unit, t_end, tol=DEFAULT_TOL) -> JacobiBundle:
    return propagate(chart, p, u_unit, t_end, focal_basis_data(chart), tol)


def detect_focal(geodesic: GeodesicPath, t_max, grid_step=MAX_GRID_STEP, tol=None,
                 bundle=None) -> FocalReport:
    """Scan ``(0, t_max]`` for focal points of the initial leaf along ``geodesic``.

    The geodesic is re-parameterised by arc length.  Sign changes of the
    focal determinant and near-zero local minima of the smallest singular value
    are refined on re-integrated (not interpolated) states.
    """
    grid_step = min(float(grid_step), MAX_GRID_STEP)
    chart = geodesic.chart
    tol = tol or geodesic.tolerance
    if bundle is None:
        p, u = _unit_start(geodesic)
        bundle = propagate_focal_basis(chart, p, u, t_max, tol)
    grid = np.arange(1, int(np.floor(t_max / grid_step)) + 1) * grid_step
    sig, det = [], []
    for t in grid:
        M = focal_matrix(bundle, t)
        sv = np.linalg.svd(M, compute_uv=False)
        sig.append(sv[-1])
        det.append(np.linalg.det(M))
    sig, det = np.array(sig), np.array(det)
    threshold = FOCAL_RATIO * sig[0]

    def sigma_exact(t):
        return np.linalg.svd(focal_matrix(bundle, t, exact=True), compute_uv=False)[-1]

    def det_exact(t):
        return np.linalg.det(focal_matrix(bundle, t, exact=True))

    found = []
    for i in range(len(grid) - 1):
        a, b = grid[i], grid[i + 1]
        if np.sign(det[i]) != np.sign(det[i + 1]) and det[i] != 0:
            t_star = brentq(det_exact, a, b, xtol=1e-13, rtol=1e-15)
            found.append(t_star)
        elif 0 < i and sig[i] <= sig[i - 1] and sig[i] <= sig[i + 1] and sig[i] < 1e-2 * sig.max():
            opt = minimize_scalar(sigma_exact, bounds=(grid[i - 1], b), method="bounded",
                                  options={"xatol": 1e-12})
            found.append(float(opt.x))
    candidates = []
    for t_star in sorted(set(found)):
        s = float(sigma_exact(t_star))
        candidates.append(FocalCandidate(float(t_star), s, float(threshold), s < threshold))
    return FocalReport(float(t_max), grid_step, grid, sig, candidates)


@dataclass
class HessianResult:
    """Hessian of the distance to a leaf at ``target`` from the BVP fields.

    ``form`` is the bilinear form ``<V_H(rho), W(rho)>`` on end values written
    in the parallel frame at ``rho`` as ``(vertical, horizontal without the
    radial direction)``.  The radial direction is excluded because
    ``Hess r(gamma', .) = 0``.
    """

    shooting: object
    frame: np.ndarray
    form: np.ndarray
    bundle: JacobiBundle = field(repr=False)
    coefficients: np.ndarray = field(repr=False)

    @property
    def rho(self):
        return self.shooting.rho

    @property
    def end_point(self):
        return self.bundle.geodesic.position(self.rho)

    def end_components(self, X):
        chart = self.bundle.chart
        n = chart.dim_horizontal
        c = self.frame.T @ chart.g(self.end_point) @ _as_vec(X)
        return np.concatenate([c[n:], c[1:n]])

    def value(self, X):
        """``Hess(r)(X, X)``."""
        c = self.end_components(X)
        return float(c @ self.form @ c)

    def bilinear(self, X, Y):
        return float(self.end_components(X) @ self.form @ self.end_components(Y))

    @property
    def horizontal_block(self):
        m = self.bundle.chart.dim_vertical
        return self.form[m:, m:]

    @property
    def trace(self):
        """Horizontal trace, i.e. the horizontal Laplacian of ``r``."""
        return float(np.trace(self.horizontal_block))


def hessian_at(chart, leaf_seed, target, shooting=None, tol=DEFAULT_TOL) -> HessianResult:
    """Solve the boundary-value problems ``V_H(0) = 0, V(rho) = X`` for a frame of X."""
    if shooting is None:
        shooting = invert_normal_exp(chart, leaf_seed, target)
    rho = shooting.rho
    u_unit = shooting.u.components / rho
    bundle = propagate_focal_basis(chart, shooting.base, u_unit, rho, tol)
    x, v, F, cV, cH, w = bundle.at(rho)
    M = np.vstack([cV, cH[1:]])
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[-1] < 1e-10 * max(sv[0], 1.0):
        raise SingularBVP(f"focal matrix singular at rho={rho:.6g} (sigma_min={sv[-1]:.3e})")
    coeffs = np.linalg.solve(M, np.eye(M.shape[0]))   # one column per unit end value
    form = (cH @ coeffs).T @ (w @ coeffs)
    return HessianResult(shooting, F, form, bundle, coeffs)


def hessian_distance(chart, leaf_seed, target, X, **kw) -> float:
    return hessian_at(chart, leaf_seed, target, **kw).value(X)


def bvp_profile(result: HessianResult, X, ts):
    """``(|V_H|, <V_H, W>, |V_V|)`` along the BVP field ending at ``X``."""
    a = result.coefficients @ result.end_components(X)
    norms, inner, vv = [], [], []
    for t in ts:
        _, _, _, cV, cH, w = result.bundle.at(t)
        vh, ww = cH @ a, w @ a
        norms.append(np.linalg.norm(vh))
        inner.append(vh @ ww)
        vv.append(np.linalg.norm(cV @ a))
    return np.array(norms), np.array(inner), np.array(vv)


def riccati_ratio(result: HessianResult, X_end, t) -> float:
    """``<V_H, nabla V_H> / |V_H|^2`` at ``t`` for the BVP field ending at ``X_end``."""
    norms, inner, _ = bvp_profile(result, X_end, [t])
    if norms[0] ** 2 < 1e-14:
        raise DivisionNearZero(f"|V_H(t)|^2 = {norms[0] ** 2:.3e} at t={t}")
    return float(inner[0] / norms[0] ** 2)
