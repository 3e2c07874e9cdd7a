"""Levi-Civita connection, the adapted connection, torsion, J-map and curvature.

Coordinate conventions used throughout:

* ``Gamma[k, i, j]`` is the k-th component of ``D_{d_i} d_j`` (Levi-Civita);
* ``A[k, i, j]`` is the k-th component of ``nabla_{d_i} d_j`` for the adapted
  connection, assembled from the four-case definition on the split parts of
  the coordinate fields;
* ``T[k, i, j]`` is the k-th component of ``Tor(d_i, d_j)``;
* ``R[l, i, j, k]`` is the l-th component of ``R(d_i, d_j) d_k``.

The torsion kernel is built from its own case formula (brackets and the C
tensor), not by antisymmetrising ``A``; the two routes are compared in
:func:`verify_structure_identities`.  Likewise the Levi-Civita curvature is
computed from the Christoffel symbols alone.
"""
from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import jax
import jax.numpy as jnp
import numpy as np

from .errors import NotHorizontal, NotOrthonormal
from .metric_core import (AdaptedFrame, FoliatedChart, SplitVector, _as_vec, adapted_frame,
                          lie_derivative_metric, project, sample_interior)

TOL_HORIZONTAL = 1e-8


# ---------------------------------------------------------------------------
# traceable building blocks
# ---------------------------------------------------------------------------

def _christoffel(chart, p):
    g = chart.metric_fn(p)
    dg = chart.derivative(chart.metric_fn)(p)
    lower = (jnp.transpose(dg, (0, 2, 1)) + dg - jnp.transpose(dg, (2, 0, 1)))
    return 0.5 * jnp.einsum("kl,lij->kij", jnp.linalg.inv(g), lower)


def _curvature_from(coeffs, dcoeffs):
    """``R[l,i,j,k]`` for a connection with coordinate coefficients ``coeffs``."""
    return (jnp.einsum("ljki->lijk", dcoeffs) - jnp.einsum("likj->lijk", dcoeffs)
            + jnp.einsum("lim,mjk->lijk", coeffs, coeffs)
            - jnp.einsum("ljm,mik->lijk", coeffs, coeffs))


def _cov(dW, U, W, Gamma):
    """``out[k,i,j]`` = k-th component of ``D_{U_i} W_j`` for column fields."""
    return jnp.einsum("kjl,li->kij", dW, U) + jnp.einsum("klm,li,mj->kij", Gamma, U, W)


def _bracket(dU, dW, U, W):
    """``out[k,i,j]`` = k-th component of ``[U_i, W_j]``."""
    return jnp.einsum("kjl,li->kij", dW, U) - jnp.einsum("kil,lj->kij", dU, W)


def _split_fields(chart):
    n = chart.dim_horizontal

    def PV(q):
        E = chart.frame_fn(q)[:, n:]
        return E @ E.T @ chart.metric_fn(q)

    def PH(q):
        return jnp.eye(chart.dim_total) - PV(q)

    return PH, PV


def _c_columns(chart, p, H, dH, V):
    """``out[k,i,j]`` = k-th component of ``C_{H_i} V_j``."""
    n = chart.dim_horizontal
    g = chart.metric_fn(p)
    dg = chart.derivative(chart.metric_fn)(p)
    EV = chart.frame_fn(p)[:, n:]
    d = chart.dim_total
    cols = []
    for i in range(d):
        L = lie_derivative_metric(g, dg, H[:, i], dH[:, i, :])
        cols.append(0.5 * EV @ EV.T @ L @ V)
    return jnp.stack(cols, axis=1)


def _nabla_coeffs(chart, p):
    PH, PV = _split_fields(chart)
    Gamma = _christoffel(chart, p)
    H, V = PH(p), PV(p)
    dH, dV = chart.derivative(PH)(p), chart.derivative(PV)(p)
    hh = jnp.einsum("ka,aij->kij", H, _cov(dH, H, H, Gamma))
    vh = jnp.einsum("ka,aij->kij", H, _bracket(dV, dH, V, H))
    hv = jnp.einsum("ka,aij->kij", V, _bracket(dH, dV, H, V)) + _c_columns(chart, p, H, dH, V)
    vv = jnp.einsum("ka,aij->kij", V, _cov(dV, V, V, Gamma))
    return hh + vh + hv + vv


def _torsion_case(chart, p):
    PH, PV = _split_fields(chart)
    H, V = PH(p), PV(p)
    dH = chart.derivative(PH)(p)
    Cm = _c_columns(chart, p, H, dH, V)
    return (-jnp.einsum("ka,aij->kij", V, _bracket(dH, dH, H, H))
            + Cm - jnp.transpose(Cm, (0, 2, 1)))


def _c_tensor(chart, p):
    PH, PV = _split_fields(chart)
    H, V = PH(p), PV(p)
    return _c_columns(chart, p, H, chart.derivative(PH)(p), V)


def _mean_curvature(chart, p):
    n = chart.dim_horizontal
    PH, _ = _split_fields(chart)
    EV_fn = lambda q: chart.frame_fn(q)[:, n:]
    EV = EV_fn(p)
    D = _cov(chart.derivative(EV_fn)(p), EV, EV, _christoffel(chart, p))
    return PH(p) @ jnp.einsum("kaa->k", D)


def kernels(chart: FoliatedChart) -> SimpleNamespace:
    """Jitted per-chart kernels (built once, cached on the chart)."""
    cached = getattr(chart, "_cc_kernels", None)
    if cached is not None:
        return cached
    chris = lambda p: _christoffel(chart, p)
    nab = lambda p: _nabla_coeffs(chart, p)
    ns = SimpleNamespace(
        christoffel=jax.jit(chris),
        riemann_lc=jax.jit(lambda p: _curvature_from(chris(p), chart.derivative(chris)(p))),
        nabla=jax.jit(nab),
        curvature=jax.jit(lambda p: _curvature_from(nab(p), chart.derivative(nab)(p))),
        torsion=jax.jit(lambda p: _torsion_case(chart, p)),
        c_tensor=jax.jit(lambda p: _c_tensor(chart, p)),
        mean_curvature=jax.jit(lambda p: _mean_curvature(chart, p)),
        dgdx=jax.jit(chart.derivative(chart.metric_fn)),
    )

    def _geometry(p):
        A = nab(p)
        return chart.metric_fn(p), chris(p), A, _curvature_from(A, chart.derivative(nab)(p))

    def _along(p, v):
        # everything the Jacobi system needs, contracted with the velocity v
        g, Gamma, A, R = _geometry(p)
        T = A - jnp.transpose(A, (0, 2, 1))
        # packed into one buffer: a single device-to-host transfer per call
        return jnp.concatenate([g.ravel(), jnp.einsum("kij,i,j->k", Gamma, v, v),
                                jnp.einsum("kij,i->kj", A, v).ravel(),
                                jnp.einsum("kij,j->ki", T, v).ravel(),
                                jnp.einsum("lijk,j,k->li", R, v, v).ravel()])

    ns.geometry = jax.jit(_geometry)
    ns.along = jax.jit(_along)
    chart._cc_kernels = ns
    return ns


def _k(chart, name, p):
    return np.asarray(getattr(kernels(chart), name)(np.asarray(p, dtype=float)))


def christoffel(chart, p):
    return _k(chart, "christoffel", p)


def nabla_coefficients(chart, p):
    return _k(chart, "nabla", p)


def torsion_tensor(chart, p):
    return _k(chart, "torsion", p)


def curvature_tensor(chart, p):
    return _k(chart, "curvature", p)


def riemann_lc_tensor(chart, p):
    return _k(chart, "riemann_lc", p)


def c_tensor_coefficients(chart, p):
    return _k(chart, "c_tensor", p)


# ---------------------------------------------------------------------------
# vector fields
# ---------------------------------------------------------------------------

def coordinate_field(v):
    """Constant-coefficient coordinate field."""
    v = jnp.asarray(_as_vec(v))
    return lambda q: v


def frame_field(chart, p, v):
    """Extension of ``v`` at ``p`` with constant coefficients in the adapted frame."""
    E = chart.frame_matrix(p)
    coeffs = jnp.asarray(np.linalg.solve(E, _as_vec(v)))
    return lambda q: chart.frame_fn(q) @ coeffs


def _field(chart, p, X):
    return X if callable(X) else frame_field(chart, p, X)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConnectionCoefficients:
    """Levi-Civita and adapted coefficients in the adapted frame at ``point``.

    ``gamma_LC[k, i, j] = <D_{e_k} e_i, e_j>`` and likewise for ``gamma_nabla``.
    """

    point: np.ndarray
    frame: AdaptedFrame
    gamma_LC: np.ndarray
    gamma_nabla: np.ndarray
    frame_derivatives: np.ndarray


def connection_coefficients(chart, p) -> ConnectionCoefficients:
    frame = adapted_frame(chart, p)
    E = frame.vectors
    dE = chart.frame_derivatives(p)
    g = chart.g(p)
    deriv = np.einsum("iBl,lA->iAB", dE, E)     # d_{e_A} e_B, coordinate part

    def in_frame(coeffs):
        full = deriv + np.einsum("kij,iA,jB->kAB", coeffs, E, E)
        return np.einsum("kC,kl,lAB->ABC", E, g, full)

    return ConnectionCoefficients(np.asarray(p, float), frame,
                                  in_frame(christoffel(chart, p)),
                                  in_frame(nabla_coefficients(chart, p)), dE)


def levi_civita(chart, p, X, Y) -> SplitVector:
    """``D_X Y`` at ``p``.  Arrays are extended as adapted-frame fields."""
    p = jnp.asarray(p, dtype=float)
    Xf, Yf = _field(chart, np.asarray(p), X), _field(chart, np.asarray(p), Y)
    x = np.asarray(Xf(p))
    out = np.asarray(chart.derivative(Yf)(p)) @ x + np.einsum("kij,i,j->k", christoffel(chart, p), x,
                                                                 np.asarray(Yf(p)))
    return project(chart, np.asarray(p), out)


def nabla(chart, p, X, Y) -> SplitVector:
    """``nabla_X Y`` at ``p`` (case formula via the coordinate coefficients)."""
    p = jnp.asarray(p, dtype=float)
    Xf, Yf = _field(chart, np.asarray(p), X), _field(chart, np.asarray(p), Y)
    x = np.asarray(Xf(p))
    out = np.asarray(chart.derivative(Yf)(p)) @ x + np.einsum(
        "kij,i,j->k", nabla_coefficients(chart, p), x, np.asarray(Yf(p)))
    return project(chart, np.asarray(p), out)


def c_tensor(chart, p, X, Y) -> SplitVector:
    out = np.einsum("kij,i,j->k", c_tensor_coefficients(chart, p), _as_vec(X), _as_vec(Y))
    return project(chart, p, out)


def torsion(chart, p, X, Y) -> SplitVector:
    out = np.einsum("kij,i,j->k", torsion_tensor(chart, p), _as_vec(X), _as_vec(Y))
    return project(chart, p, out)


def j_map(chart, p, Z, X) -> SplitVector:
    """``J_Z X`` with ``<J_Z X, Y> = <Z_V, Tor(X, Y)>``; only the vertical part of Z acts."""
    g = chart.g(p)
    zv = project(chart, p, Z).v_part
    flat = np.einsum("k,kl,lij,i->j", zv, g, torsion_tensor(chart, p), _as_vec(X))
    return project(chart, p, np.linalg.solve(g, flat))


def j_matrix(chart, p, Z):
    """Coordinate matrix of ``X -> J_Z X``."""
    g = chart.g(p)
    zv = project(chart, p, Z).v_part
    flat = np.einsum("k,kl,lij->ji", zv, g, torsion_tensor(chart, p))
    return np.linalg.solve(g, flat)


def curvature_R(chart, p, X, Y, Z) -> SplitVector:
    out = np.einsum("lijk,i,j,k->l", curvature_tensor(chart, p), _as_vec(X), _as_vec(Y), _as_vec(Z))
    return project(chart, p, out)


def _check_horizontal_pair(chart, p, X, Y, tol=TOL_HORIZONTAL):
    X, Y = _as_vec(X), _as_vec(Y)
    for v in (X, Y):
        if chart.norm(p, project(chart, p, v).v_part) > tol:
            raise NotHorizontal("curvature input must be horizontal")
    if (abs(chart.inner(p, X, X) - 1) > tol or abs(chart.inner(p, Y, Y) - 1) > tol
            or abs(chart.inner(p, X, Y)) > tol):
        raise NotOrthonormal("curvature inputs must be an orthonormal pair")
    return X, Y


def transverse_sectional(chart, p, X, Y) -> float:
    """``<R(X,Y)Y, X>`` for an orthonormal horizontal pair."""
    X, Y = _check_horizontal_pair(chart, p, X, Y)
    return float(X @ chart.g(p) @ np.einsum("lijk,i,j,k->l", curvature_tensor(chart, p), X, Y, Y))


def sectional_lc(chart, p, X, Y) -> float:
    """Levi-Civita sectional curvature of the plane spanned by an orthonormal pair."""
    X, Y = _as_vec(X), _as_vec(Y)
    return float(X @ chart.g(p) @ np.einsum("lijk,i,j,k->l", riemann_lc_tensor(chart, p), X, Y, Y))


def oneill_check(chart, p, X, Y) -> float:
    """``<R(X,Y)Y,X> - K_LC(X,Y) - 3/4 |Tor(X,Y)|^2``; vanishes identically."""
    X, Y = _check_horizontal_pair(chart, p, X, Y)
    tor = np.einsum("kij,i,j->k", torsion_tensor(chart, p), X, Y)
    return (transverse_sectional(chart, p, X, Y) - sectional_lc(chart, p, X, Y)
            - 0.75 * chart.inner(p, tor, tor))


def mean_curvature(chart, p) -> SplitVector:
    """Horizontal part of sum_a D_{Z_a} Z_a over an orthonormal vertical frame (no 1/m)."""
    chart.check_point(p)
    return project(chart, p, _k(chart, "mean_curvature", p))


@dataclass(frozen=True)
class CurvatureSample:
    point: np.ndarray
    X: SplitVector
    Y: SplitVector
    Z: SplitVector
    value: SplitVector
    sectional_nabla: float
    sectional_LC: float
    torsion_XY: SplitVector


def curvature_sample(chart, p, X, Y, Z) -> CurvatureSample:
    """All curvature data for orthonormal horizontal ``X, Y`` and any ``Z``."""
    return CurvatureSample(np.asarray(p, float), project(chart, p, X), project(chart, p, Y),
                           project(chart, p, Z), curvature_R(chart, p, X, Y, Z),
                           transverse_sectional(chart, p, X, Y), sectional_lc(chart, p, X, Y),
                           torsion(chart, p, X, Y))


def random_horizontal_pair(chart, p, rng):
    """Random g-orthonormal pair in the horizontal space at ``p`` (needs n >= 2)."""
    EH = adapted_frame(chart, p).horizontal
    n = EH.shape[1]
    if n < 2:
        raise ValueError("need at least two horizontal dimensions")
    q, _ = np.linalg.qr(rng.normal(size=(n, 2)))
    return EH @ q[:, 0], EH @ q[:, 1]


# ---------------------------------------------------------------------------
# identity battery
# ---------------------------------------------------------------------------

IDENTITIES = ("levi_civita_relation", "nabla_metric", "torsion_vertical", "torsion_routes",
              "j_skew", "lemma_hor_ver", "bianchi_horizontal", "curvature_antisym",
              "curvature_metric", "block_preservation", "lc_torsion_free")


@dataclass
class IdentityReport:
    model: str
    sample_count: int
    max_residuals: dict
    rows: list

    @property
    def worst(self) -> float:
        return max(self.max_residuals.values())

    def passed(self, tol=1e-7) -> bool:
        return self.worst < tol


def identity_residuals(chart, p, rng) -> dict:
    """Residuals of the structural identities at one point for random inputs."""
    g = chart.g(p)
    ginv = np.linalg.inv(g)
    frame = adapted_frame(chart, p)
    E, EH, EV = frame.vectors, frame.horizontal, frame.vertical
    n, m = chart.dim_horizontal, chart.dim_vertical
    Gamma = christoffel(chart, p)
    A = nabla_coefficients(chart, p)
    T = torsion_tensor(chart, p)
    R = curvature_tensor(chart, p)
    dg = np.asarray(kernels(chart).dgdx(np.asarray(p, dtype=float)))
    PV = EV @ EV.T @ g
    PH = np.eye(chart.dim_total) - PV

    X, Y, Z, W = (E @ rng.normal(size=chart.dim_total) for _ in range(4))
    gnorm = lambda v: float(np.sqrt(abs(v @ g @ v)))

    def J(zv, x):
        return ginv @ np.einsum("k,kl,lij,i->j", PV @ zv, g, T, x)

    res = {}
    # nabla_X Y = D_X Y + 1/2 Tor - 1/2 J_X Y - 1/2 J_Y X (tensorial parts)
    lhs = np.einsum("kij,i,j->k", A, X, Y)
    rhs = (np.einsum("kij,i,j->k", Gamma, X, Y) + 0.5 * np.einsum("kij,i,j->k", T, X, Y)
           - 0.5 * J(X, Y) - 0.5 * J(Y, X))
    res["levi_civita_relation"] = gnorm(lhs - rhs)
    # nabla g = 0
    ax = np.einsum("kij,i->kj", A, X)
    res["nabla_metric"] = float(np.max(np.abs(np.einsum("ijk,k->ij", dg, X) - ax.T @ g - g @ ax)))
    tor = np.einsum("kij,i,j->k", T, X, Y)
    res["torsion_vertical"] = gnorm(PH @ tor)
    res["torsion_routes"] = float(np.max(np.abs(T - (A - np.transpose(A, (0, 2, 1))))))
    res["j_skew"] = abs(J(Z, X) @ g @ Y + J(Z, Y) @ g @ X)
    Rv = lambda a, b, c: np.einsum("lijk,i,j,k->l", R, a, b, c)
    xh = EH @ rng.normal(size=n)
    yv = EV @ rng.normal(size=m)
    res["lemma_hor_ver"] = gnorm(Rv(yv, xh, xh))
    res["bianchi_horizontal"] = gnorm(PH @ (Rv(X, Y, Z) + Rv(Y, Z, X) + Rv(Z, X, Y)))
    res["curvature_antisym"] = gnorm(Rv(X, Y, Z) + Rv(Y, X, Z))
    res["curvature_metric"] = abs(Rv(X, Y, Z) @ g @ W + Rv(X, Y, W) @ g @ Z)
    zh, zv = PH @ Z, PV @ Z
    res["block_preservation"] = max(gnorm(PV @ Rv(X, Y, zh)), gnorm(PH @ Rv(X, Y, zv)))
    res["lc_torsion_free"] = float(np.max(np.abs(Gamma - np.transpose(Gamma, (0, 2, 1)))))
    return res


def verify_structure_identities(chart, sample_count=200, seed=0, points=None) -> IdentityReport:
    rng = np.random.default_rng(seed)
    if points is None:
        points = sample_interior(chart, sample_count, rng)
    rows = []
    worst = {name: 0.0 for name in IDENTITIES}
    for p in points:
        r = identity_residuals(chart, p, rng)
        for name in IDENTITIES:
            worst[name] = max(worst[name], r[name])
            rows.append((tuple(float(c) for c in p), name, r[name]))
    return IdentityReport(chart.name, len(points), worst, rows)
