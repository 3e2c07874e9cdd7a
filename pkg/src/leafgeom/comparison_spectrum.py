"""Laplacian of the distance to a leaf, Poincare quotients and radial spectra.

Three largely independent tools live here:

* :func:`laplacian_r` and :func:`check_laplacian_comparison` evaluate the
  horizontal and full Laplacians of ``r`` from F-Jacobi boundary-value
  problems and compare them with the ``coth`` model bound;
* :class:`BumpFunction` and :func:`rayleigh_quotient` evaluate full and
  horizontal Rayleigh quotients by tensor Gauss-Legendre quadrature;
* :func:`radial_dirichlet_eigenvalue` computes the first Dirichlet eigenvalue
  of the radial model operator by Sturm bisection.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np

from . import connection_calculus as cc
from .errors import BadDimensions, EigensolveFailure, OutsideDomain, QuadratureUnderresolved
from .geodesic_flow import invert_normal_exp, normal_exp
from .jacobi_engine import hessian_at
from .metric_core import adapted_frame

MARGIN_TOL = 1e-6
QUAD_NODES = 64
QUAD_RTOL = 1e-3
STURM_TOL = 1e-10


def comparison_bound(d_H, K, r):
    """Model value ``(d_H - 1) sqrt(K) coth(sqrt(K) r)``, or ``(d_H - 1)/r`` for ``K = 0``."""
    if K == 0:
        return (d_H - 1) / r
    sk = np.sqrt(K)
    return (d_H - 1) * sk / np.tanh(sk * r)


def mckean_bound(d_total, d_vertical, K) -> float:
    """``(d_total - d_vertical - 1)^2 K / 4``.

    >>> mckean_bound(3, 1, 1.0)
    0.25
    """
    if d_total <= d_vertical + 1:
        raise BadDimensions(f"need d_total > d_vertical + 1, got {d_total}, {d_vertical}")
    if K < 0:
        raise BadDimensions(f"K must be non-negative, got {K}")
    return (d_total - d_vertical - 1) ** 2 * K / 4.0


# ---------------------------------------------------------------------------
# Laplacian of r
# ---------------------------------------------------------------------------

@dataclass
class LaplacianSample:
    target: np.ndarray
    r: float
    delta_r: float
    delta_h_r: float
    mean_curvature_term: float
    hessian: object = field(repr=False)


def laplacian_sample(chart, leaf_seed, target, init=None, tol=1e-10) -> LaplacianSample:
    """Full and horizontal Laplacian of the distance to the leaf at ``target``.

    The horizontal Laplacian is the trace of the BVP Hessian over a horizontal
    orthonormal frame.  The vertical trace of the Levi-Civita Hessian equals
    ``-<H, grad r>`` with ``H`` the (untraced) mean curvature vector.
    """
    shoot = invert_normal_exp(chart, leaf_seed, target, init=init)
    hr = hessian_at(chart, leaf_seed, target, shooting=shoot, tol=tol)
    x, v = hr.bundle.geodesic.state(hr.rho)
    H = cc.mean_curvature(chart, x).components
    term = float(H @ chart.g(x) @ v)
    dh = hr.trace
    return LaplacianSample(np.asarray(target, float), hr.rho, dh - term, dh, term, hr)


def laplacian_r(chart, leaf_seed, target, init=None):
    """``(delta_r, delta_h_r)`` at ``target``."""
    s = laplacian_sample(chart, leaf_seed, target, init=init)
    return s.delta_r, s.delta_h_r


def fd_derivatives(fun, x, h=5e-3):
    """Gradient and Hessian by central differences with one Richardson step (fourth order).

    ``h`` is a scalar or a per-coordinate array of steps.
    """
    x = np.asarray(x, float)
    h = np.broadcast_to(np.asarray(h, float), x.shape)
    g1, H1 = _central(fun, x, h)
    g2, H2 = _central(fun, x, 2 * h)
    return (4 * g1 - g2) / 3, (4 * H1 - H2) / 3


def _central(fun, x, h):
    d = len(x)
    f0 = fun(x)
    E = np.diag(h)
    fp = np.array([fun(x + E[i]) for i in range(d)])
    fm = np.array([fun(x - E[i]) for i in range(d)])
    grad = (fp - fm) / (2 * h)
    hess = np.diag((fp - 2 * f0 + fm) / h ** 2)
    for i in range(d):
        for j in range(i + 1, d):
            v = (fun(x + E[i] + E[j]) - fun(x + E[i] - E[j])
                 - fun(x - E[i] + E[j]) + fun(x - E[i] - E[j])) / (4 * h[i] * h[j])
            hess[i, j] = hess[j, i] = v
    return grad, hess


def fd_covariant_hessian(chart, fun, x, h=5e-3):
    """Levi-Civita Hessian matrix ``d^2 f - Gamma . df`` in coordinates.

    Coordinate steps are ``h / sqrt(g_ii)``, so every step has metric length ``h``.
    """
    x = np.asarray(x, float)
    grad, hess = fd_derivatives(fun, x, h / np.sqrt(np.diag(chart.g(x))))
    return hess - np.einsum("kij,k->ij", cc.christoffel(chart, x), grad)


def fd_laplacian(chart, fun, x, h=5e-3) -> float:
    """Metric trace of :func:`fd_covariant_hessian`."""
    return float(np.einsum("ij,ij->", np.linalg.inv(chart.g(x)), fd_covariant_hessian(chart, fun, x, h)))


def distance_function(chart, leaf_seed, init):
    """``q -> r(q)`` through warm-started shooting; used for finite differences.

    The shooting Jacobian at ``init`` is computed once (unless supplied) and
    reused as a chord Jacobian across the stencil.
    """
    if len(init) < 3 or init[2] is None:
        from .jacobi_engine import shooting_system
        init = (init[0], init[1], shooting_system(chart, leaf_seed, init[0], init[1], 1e-12)[1])

    def r(q):
        return invert_normal_exp(chart, leaf_seed, q, init=init, tol=1e-12).rho
    return r


def sample_targets(spec, count, rng, r_range=(0.1, 5.0), leaf_seed=None):
    """Random ``(target, (s, h))`` pairs at distance uniform in ``r_range``.

    Foot points are drawn from the sampling box projected onto the leaf and
    directions uniformly on the horizontal unit sphere.
    """
    chart = spec.chart
    seed_pt = spec.default_seed_point if leaf_seed is None else np.asarray(leaf_seed, float)
    lo, hi = chart.sampling_box
    idx = list(spec.leaf_coords)
    out = []
    while len(out) < count:
        s = lo[idx] + (hi[idx] - lo[idx]) * rng.random(len(idx))
        y = spec.leaf_point(seed_pt, s)
        direction = rng.standard_normal(spec.d_H)
        direction /= np.linalg.norm(direction)
        r = rng.uniform(*r_range)
        EH = adapted_frame(chart, y).horizontal
        h = r * direction
        out.append((normal_exp(chart, y, EH @ h), (s, h)))
    return out


@dataclass
class ComparisonRow:
    target: np.ndarray
    r: float
    delta_r: float
    delta_h_r: float
    bound: float

    @property
    def margin(self):
        return self.delta_h_r - self.bound


@dataclass
class ComparisonReport:
    model: str
    K: float
    d_H: int
    rows: list

    @property
    def margins(self):
        return np.array([row.margin for row in self.rows])

    @property
    def min_margin(self):
        return float(self.margins.min())

    @property
    def max_abs_margin(self):
        return float(np.abs(self.margins).max())

    @property
    def max_minimality_gap(self):
        return float(max(abs(row.delta_r - row.delta_h_r) for row in self.rows))

    @property
    def violations(self):
        return [row for row in self.rows if row.margin < -MARGIN_TOL]

    @property
    def passed(self):
        return not self.violations

    def csv_rows(self):
        return [(*map(float, row.target), row.r, row.delta_r, row.delta_h_r, row.bound, row.margin)
                for row in self.rows]


def check_laplacian_comparison(chart, leaf_seed, K, samples, model="") -> ComparisonReport:
    """Compare ``delta_h_r`` with the model bound at every sample.

    ``samples`` holds target points or ``(target, init)`` pairs as produced by
    :func:`sample_targets`.
    """
    rows = []
    for item in samples:
        target, init = item if isinstance(item, tuple) else (item, None)
        s = laplacian_sample(chart, leaf_seed, target, init=init)
        rows.append(ComparisonRow(s.target, s.r, s.delta_r, s.delta_h_r,
                                  float(comparison_bound(chart.dim_horizontal, K, s.r))))
    return ComparisonReport(model or chart.name, float(K), chart.dim_horizontal, rows)


# ---------------------------------------------------------------------------
# Rayleigh quotients
# ---------------------------------------------------------------------------

BUMP_PROFILES = ("ball", "vertical")


@dataclass(frozen=True)
class BumpFunction:
    """``amplitude * exp(-1/(1 - s^2))`` with ``s`` the coordinate radius over ``radius``.

    Profile ``"vertical"`` measures ``s`` in the leaf coordinates only, giving
    a function that is constant along horizontal coordinate lines.
    """

    center: np.ndarray
    radius: float
    profile: str = "ball"
    amplitude: float = 1.0
    coords: Optional[tuple] = None

    def box(self):
        c = np.asarray(self.center, float)
        return c - self.radius, c + self.radius

    def _q(self, X):
        c = np.asarray(self.center, float)
        D = (X - c) / self.radius
        if self.coords is not None:
            mask = np.zeros(X.shape[-1])
            mask[list(self.coords)] = 1.0
            D = D * mask
        return D, np.sum(D * D, axis=-1)

    def values_and_gradients(self, X):
        """``f`` and ``df`` (coordinate differential) at rows of ``X``."""
        D, q = self._q(X)
        inside = q < 1.0
        qi = np.where(inside, q, 0.0)
        f = np.where(inside, self.amplitude * np.exp(-1.0 / (1.0 - qi)), 0.0)
        fac = np.where(inside, -2.0 / ((1.0 - qi) ** 2 * self.radius), 0.0)
        return f, (f * fac)[:, None] * D

    def validate(self, chart, leaf_seed=None, leaf_coords=()):
        lo, hi = self.box()
        if not (np.all(lo > chart.lower) and np.all(hi < chart.upper)):
            raise OutsideDomain("bump support leaves the chart domain")
        if leaf_seed is not None and self.profile == "ball":
            t = [i for i in range(chart.dim_total) if i not in leaf_coords]
            c = np.asarray(self.center, float)
            if np.linalg.norm(c[t] - np.asarray(leaf_seed, float)[t]) <= self.radius:
                raise OutsideDomain("bump support meets the reference leaf")


def make_bump(center, radius, profile="ball", amplitude=1.0, leaf_coords=()):
    if profile not in BUMP_PROFILES:
        raise ValueError(f"unknown bump profile {profile!r}")
    coords = tuple(leaf_coords) if profile == "vertical" else None
    return BumpFunction(np.asarray(center, float), float(radius), profile, float(amplitude), coords)


def random_bumps(spec, count, rng, radius_range=(0.1, 0.4), leaf_seed=None):
    """Seeded bumps inside the sampling box whose support avoids the reference leaf."""
    chart = spec.chart
    seed_pt = spec.default_seed_point if leaf_seed is None else leaf_seed
    lo, hi = chart.sampling_box
    out = []
    while len(out) < count:
        rad = rng.uniform(*radius_range)
        c = lo + (hi - lo) * rng.random(chart.dim_total)
        b = make_bump(c, rad)
        try:
            b.validate(chart, seed_pt, spec.leaf_coords)
        except OutsideDomain:
            continue
        out.append(b)
    return out


def _point_kernel(chart):
    """Batched ``(volume density, |grad f|^2, horizontal frame components of df)``."""
    k = getattr(chart, "_cs_point_kernel", None)
    if k is None:
        n = chart.dim_horizontal

        def one(p, df):
            g = chart.metric_fn(p)
            EH = chart.frame_fn(p)[:, :n]
            return jnp.sqrt(jnp.linalg.det(g)), df @ jnp.linalg.solve(g, df), df @ EH

        k = jax.jit(jax.vmap(one))
        chart._cs_point_kernel = k
    return k


def _nodes(box, n):
    lo, hi = box
    x, w = np.polynomial.legendre.leggauss(n)
    axes = [0.5 * (h - l) * x + 0.5 * (h + l) for l, h in zip(lo, hi)]
    weights = [0.5 * (h - l) * w for l, h in zip(lo, hi)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
    W = np.ones(1)
    for wi in weights:
        W = np.multiply.outer(W, wi).reshape(-1)
    return X, W


def _quadrature(chart, bump, n):
    X, W = _nodes(bump.box(), n)
    f, df = bump.values_and_gradients(X)
    vol, full, grad_h = (np.asarray(a) for a in _point_kernel(chart)(jnp.asarray(X), jnp.asarray(df)))
    dm = W * vol
    hor = np.sum(grad_h ** 2, axis=1)
    mass = np.sum(f * f * dm)
    return np.sum(full * dm) / mass, np.sum(hor * dm) / mass, X, dm, f, grad_h


@dataclass
class RayleighResult:
    full: float
    horizontal: float
    coarse: tuple
    nodes: int


def rayleigh_quotient(chart, bump, nodes=QUAD_NODES, rtol=QUAD_RTOL, check=True):
    """``(full, horizontal)`` Rayleigh quotients of ``bump``.

    With ``check`` the quotients are recomputed on ``nodes // 2`` points per
    axis and :class:`QuadratureUnderresolved` is raised on a relative change
    above ``rtol``.
    """
    res = rayleigh_details(chart, bump, nodes, rtol, check)
    return res.full, res.horizontal


def rayleigh_details(chart, bump, nodes=QUAD_NODES, rtol=QUAD_RTOL, check=True) -> RayleighResult:
    full, hor = _quadrature(chart, bump, nodes)[:2]
    coarse = (np.nan, np.nan)
    if check:
        coarse = _quadrature(chart, bump, nodes // 2)[:2]
        for a, b in zip((full, hor), coarse):
            if abs(a - b) > rtol * max(abs(a), 1e-300):
                raise QuadratureUnderresolved(
                    f"quotient changed from {b:.6g} to {a:.6g} on refinement ({nodes // 2} -> {nodes} nodes)")
    return RayleighResult(float(full), float(hor), tuple(map(float, coarse)), nodes)


def _laplacian_kernel(chart, r_fn):
    """Batched ``(horizontal frame components of dr, Delta_H r)`` from a closed-form distance."""
    n = chart.dim_horizontal

    def one(p):
        g = chart.metric_fn(p)
        ginv = jnp.linalg.inv(g)
        dr = jax.grad(r_fn)(p)
        hess = jax.hessian(r_fn)(p) - jnp.einsum("kij,k->ij", cc._christoffel(chart, p), dr)
        lap = jnp.sum(ginv * hess)
        grad = ginv @ dr
        H = cc._mean_curvature(chart, p)
        return dr @ chart.frame_fn(p)[:, :n], lap + H @ g @ grad

    return jax.jit(jax.vmap(one))


@dataclass
class ProofReplication:
    """Integration by parts and the Cauchy-Schwarz chain on one bump."""

    lhs: float               # int f^2 Delta_H r
    rhs: float               # -int <grad_H f^2, grad_H r>
    ibp_residual: float
    lower: float             # (d_H - 1) sqrt(K) int f^2
    upper: float             # 2 ||f|| ||grad_H f||
    min_delta_h_r: float
    chain_holds: bool


def proof_replication(spec, bump, K, leaf_seed=None, nodes=QUAD_NODES) -> ProofReplication:
    """Evaluate the integration-by-parts identity behind the Poincare bound.

    Requires the model's closed-form distance; ``Delta_H r`` comes from
    automatic differentiation of it.
    """
    chart = spec.chart
    seed_pt = spec.default_seed_point if leaf_seed is None else leaf_seed
    if spec.distance_fn is None:
        raise ValueError(f"model {spec.id} has no closed-form distance")
    key = ("_cs_lap", tuple(np.asarray(seed_pt, float)))
    cache = chart.__dict__.setdefault("_cs_lap_cache", {})
    if key not in cache:
        cache[key] = _laplacian_kernel(chart, spec.distance_fn(jnp.asarray(seed_pt, dtype=float)))
    _, _, X, dm, f, grad_h_f = _quadrature(chart, bump, nodes)
    grad_h_r, lap_h = (np.asarray(a) for a in cache[key](jnp.asarray(X)))
    lhs = float(np.sum(f * f * lap_h * dm))
    rhs = float(-np.sum(2 * f * np.sum(grad_h_f * grad_h_r, axis=1) * dm))
    mass = float(np.sum(f * f * dm))
    energy = float(np.sum(np.sum(grad_h_f ** 2, axis=1) * dm))
    lower = (chart.dim_horizontal - 1) * np.sqrt(K) * mass
    upper = 2 * np.sqrt(mass * energy)
    support = f > 0
    min_lap = float(lap_h[support].min()) if support.any() else float("nan")
    tol = 1e-8 * max(abs(lhs), 1.0)
    return ProofReplication(lhs, rhs, abs(lhs - rhs) / max(abs(lhs), 1e-300), float(lower),
                            float(upper), min_lap,
                            bool(lower <= lhs + tol and abs(rhs) <= upper + tol))


# ---------------------------------------------------------------------------
# radial Dirichlet spectrum
# ---------------------------------------------------------------------------

@dataclass
class SpectrumResult:
    model: str
    d_H: int
    K: float
    R: float
    grid_n: int
    eigenvalue: float
    bound: float

    @property
    def gap(self):
        return self.eigenvalue - self.bound

    def csv_row(self):
        return (self.model, self.d_H, self.K, self.R, self.grid_n, self.eigenvalue, self.bound, self.gap)


def _log_weight(d_H, K, r):
    if d_H == 1:
        return np.zeros_like(r)
    if K == 0:
        return (d_H - 1) * np.log(r)
    x = np.sqrt(K) * r
    return (d_H - 1) * (x + np.log1p(-np.exp(-2 * x)) - np.log(2.0))


def radial_matrix(d_H, K, R, grid_n):
    """Diagonal and off-diagonal of the symmetrised radial operator.

    Nodes sit at ``(i - 1/2) h`` with ``h = R / (N + 1/2)`` so the Dirichlet
    node falls on ``R``; the flux through ``r = 0`` vanishes.
    """
    N = int(grid_n)
    h = R / (N + 0.5)
    r = (np.arange(1, N + 1) - 0.5) * h
    rf = np.arange(0, N + 1) * h                  # faces r_{i - 1/2}, i = 1..N+1
    lw = _log_weight(d_H, K, r)
    lf = np.full(N + 1, -np.inf)
    lf[1:] = _log_weight(d_H, K, rf[1:])
    left = np.exp(lf[:-1] - lw)
    right = np.exp(lf[1:] - lw)
    diag = (left + right) / h ** 2
    off = -np.exp(lf[1:-1] - 0.5 * (lw[:-1] + lw[1:])) / h ** 2
    return diag, off


def sturm_count(diag, off, x):
    """Number of eigenvalues below ``x`` of a symmetric tridiagonal matrix."""
    count = 0
    q = diag[0] - x
    tiny = np.finfo(float).tiny
    if q < 0:
        count += 1
    off2 = off * off
    with np.errstate(over="ignore", divide="ignore"):
        for i in range(1, len(diag)):
            if q == 0.0:
                q = tiny
            q = diag[i] - x - off2[i - 1] / q
            if q < 0:
                count += 1
    return count


def smallest_eigenvalue(diag, off, tol=STURM_TOL, max_iter=400):
    """Lowest eigenvalue by bisection on the Sturm count."""
    a = np.abs(np.concatenate([[0.0], off]))
    b = np.abs(np.concatenate([off, [0.0]]))
    lo = float(np.min(diag - a - b))
    hi = float(np.max(diag + a + b))
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise EigensolveFailure("non-finite Gershgorin bounds")
    for _ in range(max_iter):
        if hi - lo <= tol * max(1.0, abs(lo)):
            return 0.5 * (lo + hi)
        mid = 0.5 * (lo + hi)
        if sturm_count(diag, off, mid) >= 1:
            hi = mid
        else:
            lo = mid
    raise EigensolveFailure(f"bisection did not reach {tol} in {max_iter} steps")


def radial_dirichlet_eigenvalue(d_H, K, R, grid_n=4000, model="radial") -> SpectrumResult:
    """First Dirichlet eigenvalue of ``-u'' - (d_H - 1) sqrt(K) coth(sqrt(K) r) u'`` on ``(0, R)``."""
    if R <= 0 or grid_n < 100:
        raise EigensolveFailure("need R > 0 and grid_n >= 100")
    diag, off = radial_matrix(int(d_H), float(K), float(R), grid_n)
    lam = smallest_eigenvalue(diag, off)
    bound = (d_H - 1) ** 2 * K / 4.0
    return SpectrumResult(model, int(d_H), float(K), float(R), int(grid_n), float(lam), float(bound))


def refinement_study(d_H, K, R, grids=(4000, 8000)):
    """Eigenvalues on successively refined grids."""
    return [radial_dirichlet_eigenvalue(d_H, K, R, n) for n in grids]


def decay_exponent(results):
    """Least-squares slope ``p`` in ``lambda(R) - bound ~ C R^-p``."""
    R = np.array([r.R for r in results])
    gap = np.array([r.gap for r in results])
    slope = np.polyfit(np.log(R), np.log(gap), 1)[0]
    return float(-slope)
