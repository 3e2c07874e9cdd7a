"""Foliated coordinate charts: metric, vertical distribution, frames, projections.

A :class:`FoliatedChart` is the single source of geometric truth.  It wraps two
callables written with ``jax.numpy``:

* ``metric(p)`` returning the symmetric matrix ``g_ij(p)``;
* ``vertical_frame(p)`` returning a ``(dim, m)`` matrix whose columns span the
  tangent spaces of the leaves.

Coordinate partials of both are produced either exactly (forward-mode autodiff
of the closed-form closures) or by centred finite differences with a
configurable step.  Every other module reaches derivatives through
:meth:`FoliatedChart.derivative`, so switching the mode switches the whole
pipeline.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import jax
import jax.numpy as jnp
import numpy as np

from .errors import DegenerateMetric, OutsideDomain, SingularVerticalFrame

jax.config.update("jax_enable_x64", True)

EIG_FLOOR = 1e-12
GRAM_FLOOR = 1e-12
SKIP_NORM = 1e-8

ANALYTIC = "analytic"
FINITE_DIFFERENCE = "finite_difference"


@dataclass(frozen=True)
class SplitVector:
    """Tangent vector at ``point`` with its horizontal and vertical parts."""

    point: np.ndarray
    components: np.ndarray
    h_part: np.ndarray
    v_part: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.components, dtype=dtype)


@dataclass(frozen=True)
class AdaptedFrame:
    """g-orthonormal frame at ``point``: horizontal columns first, vertical last."""

    point: np.ndarray
    vectors: np.ndarray
    dim_horizontal: int

    @property
    def horizontal(self) -> np.ndarray:
        return self.vectors[:, :self.dim_horizontal]

    @property
    def vertical(self) -> np.ndarray:
        return self.vectors[:, self.dim_horizontal:]


@dataclass(frozen=True)
class BundleLikeReport:
    max_residual: float
    passed: bool
    tolerance: float
    residuals: np.ndarray = field(repr=False)
    points: np.ndarray = field(repr=False)


def _as_vec(v) -> np.ndarray:
    if isinstance(v, SplitVector):
        return np.asarray(v.components, dtype=float)
    return np.asarray(v, dtype=float)


def central_difference(f, step):
    """Jacobian of ``f`` by centred differences; derivative index is last."""

    def df(p):
        eye = jnp.eye(p.shape[0], dtype=p.dtype)
        cols = [(f(p + step * eye[k]) - f(p - step * eye[k])) / (2.0 * step)
                for k in range(p.shape[0])]
        return jnp.stack(cols, axis=-1)

    return df


def gram_schmidt_adapted(g, Z, h_seed):
    """Adapted orthonormal frame from the metric, vertical oracle and seed indices.

    Vertical vectors are orthonormalised first; then the coordinate basis
    vectors listed in ``h_seed`` are projected off everything already built
    and normalised.  Traceable by JAX.
    """
    dim = g.shape[0]
    built = []
    for a in range(Z.shape[1]):
        v = Z[:, a]
        for w in built:
            v = v - (w @ g @ v) * w
        built.append(v / jnp.sqrt(v @ g @ v))
    vertical = list(built)
    horizontal = []
    for k in h_seed:
        v = jnp.zeros(dim, dtype=g.dtype).at[k].set(1.0)
        for w in built:
            v = v - (w @ g @ v) * w
        v = v / jnp.sqrt(v @ g @ v)
        built.append(v)
        horizontal.append(v)
    return jnp.stack(horizontal + vertical, axis=1)


class FoliatedChart:
    """A coordinate box carrying a bundle-like metric and a foliation.

    Parameters
    ----------
    metric : callable
        ``p -> g(p)``, a JAX-traceable function returning a ``(dim, dim)`` array.
    vertical_frame : callable
        ``p -> Z(p)``, JAX-traceable, ``(dim, dim_vertical)`` columns spanning the leaves.
    dim_horizontal, dim_vertical : int
    lower, upper : array_like
        Coordinate box.  Infinite bounds are allowed.
    closed_lower, closed_upper : array_like of bool, optional
        Whether each face belongs to the domain (default: open faces).
    derivative_mode : {"analytic", "finite_difference"}
    fd_step : float
        Step for the finite-difference mode.
    """

    def __init__(self, metric, vertical_frame, dim_horizontal, dim_vertical, lower, upper,
                 closed_lower=None, closed_upper=None, derivative_mode=ANALYTIC,
                 fd_step=1e-5, name="chart", reference_point=None, sampling_box=None,
                 leaf_coords=None):
        if dim_horizontal < 1 or dim_vertical < 1:
            raise ValueError("both the horizontal and vertical dimensions must be >= 1")
        if derivative_mode not in (ANALYTIC, FINITE_DIFFERENCE):
            raise ValueError(f"unknown derivative mode {derivative_mode!r}")
        self.metric_fn = metric
        self.vertical_fn = vertical_frame
        self.dim_horizontal = int(dim_horizontal)
        self.dim_vertical = int(dim_vertical)
        self.dim_total = self.dim_horizontal + self.dim_vertical
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.shape != (self.dim_total,) or self.upper.shape != (self.dim_total,):
            raise ValueError("domain bounds must have length dim_total")
        d = self.dim_total
        self.closed_lower = np.zeros(d, bool) if closed_lower is None else np.asarray(closed_lower, bool)
        self.closed_upper = np.zeros(d, bool) if closed_upper is None else np.asarray(closed_upper, bool)
        self.derivative_mode = derivative_mode
        self.fd_step = float(fd_step)
        self.name = name
        if reference_point is None:
            reference_point = np.where(np.isfinite(self.lower) & np.isfinite(self.upper),
                                       0.5 * (self.lower + self.upper),
                                       np.clip(0.0, self.lower + 1.0, self.upper - 1.0))
        self.reference_point = np.asarray(reference_point, dtype=float)
        if sampling_box is None:
            sampling_box = (np.where(np.isfinite(self.lower), self.lower, self.reference_point - 1.0),
                            np.where(np.isfinite(self.upper), self.upper, self.reference_point + 1.0))
        self.sampling_box = tuple(np.asarray(b, dtype=float) for b in sampling_box)
        self.h_seed = self._choose_horizontal_seed(self.reference_point)
        # coordinates that move along a leaf when the others are frozen
        self.leaf_coords = None if leaf_coords is None else tuple(int(i) for i in leaf_coords)

    def __repr__(self):
        return (f"FoliatedChart({self.name!r}, n={self.dim_horizontal}, m={self.dim_vertical}, "
                f"mode={self.derivative_mode})")

    def with_derivative_mode(self, mode, fd_step=None):
        """Copy of this chart using another derivative mode."""
        return FoliatedChart(self.metric_fn, self.vertical_fn, self.dim_horizontal,
                             self.dim_vertical, self.lower, self.upper, self.closed_lower,
                             self.closed_upper, mode, self.fd_step if fd_step is None else fd_step,
                             self.name, self.reference_point, self.sampling_box,
                             self.leaf_coords)

    # -- derivatives -----------------------------------------------------
    def derivative(self, f):
        """Jacobian operator in the chart's derivative mode (new axis last)."""
        if self.derivative_mode == ANALYTIC:
            return jax.jacfwd(f)
        return central_difference(f, self.fd_step)

    def _choose_horizontal_seed(self, p):
        g = np.asarray(self.metric_fn(jnp.asarray(p)))
        Z = np.asarray(self.vertical_fn(jnp.asarray(p)))
        basis = []
        for a in range(Z.shape[1]):
            v = Z[:, a].copy()
            for w in basis:
                v -= (w @ g @ v) * w
            basis.append(v / np.sqrt(v @ g @ v))
        seed = []
        for k in range(self.dim_total):
            v = np.zeros(self.dim_total)
            v[k] = 1.0
            for w in basis:
                v -= (w @ g @ v) * w
            nrm = np.sqrt(max(v @ g @ v, 0.0))
            if nrm < SKIP_NORM:
                continue
            basis.append(v / nrm)
            seed.append(k)
            if len(seed) == self.dim_horizontal:
                break
        if len(seed) != self.dim_horizontal:
            raise SingularVerticalFrame("could not complete a horizontal frame at the reference point")
        return tuple(seed)

    # -- jitted kernels ----------------------------------------------------
    @cached_property
    def _g(self):
        return jax.jit(self.metric_fn)

    @cached_property
    def _Z(self):
        return jax.jit(self.vertical_fn)

    @cached_property
    def _dg(self):
        return jax.jit(self.derivative(self.metric_fn))

    @cached_property
    def _dZ(self):
        return jax.jit(self.derivative(self.vertical_fn))

    def frame_fn(self, p):
        """Traceable adapted frame, columns (horizontal..., vertical...)."""
        return gram_schmidt_adapted(self.metric_fn(p), self.vertical_fn(p), self.h_seed)

    def projector_v_fn(self, p):
        """Traceable matrix of the g-orthogonal projection onto the vertical space."""
        E = self.frame_fn(p)[:, self.dim_horizontal:]
        return E @ E.T @ self.metric_fn(p)

    @cached_property
    def _frame(self):
        return jax.jit(self.frame_fn)

    @cached_property
    def _dframe(self):
        return jax.jit(self.derivative(self.frame_fn))

    # -- numpy-facing accessors --------------------------------------------
    def g(self, p):
        return np.asarray(self._g(np.asarray(p, dtype=float)))

    def dg(self, p):
        """``dg[i, j, k] = d_k g_ij``."""
        return np.asarray(self._dg(np.asarray(p, dtype=float)))

    def Z(self, p):
        return np.asarray(self._Z(np.asarray(p, dtype=float)))

    def dZ(self, p):
        """``dZ[i, a, k] = d_k Z_a^i``."""
        return np.asarray(self._dZ(np.asarray(p, dtype=float)))

    def frame_matrix(self, p):
        return np.asarray(self._frame(np.asarray(p, dtype=float)))

    def frame_derivatives(self, p):
        """``dE[i, A, k] = d_k e_A^i`` for the adapted frame."""
        return np.asarray(self._dframe(np.asarray(p, dtype=float)))

    def leaf_point(self, seed, s):
        """Point of the leaf through ``seed`` with leaf coordinates ``s``."""
        if self.leaf_coords is None:
            raise ValueError("chart has no leaf parameterisation")
        y = np.array(seed, dtype=float)
        y[list(self.leaf_coords)] = s
        return y

    def inner(self, p, u, v):
        return float(_as_vec(u) @ self.g(p) @ _as_vec(v))

    def norm(self, p, u):
        return float(np.sqrt(max(self.inner(p, u, u), 0.0)))

    # -- domain ------------------------------------------------------------
    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        lo_ok = np.where(self.closed_lower, p >= self.lower, p > self.lower)
        hi_ok = np.where(self.closed_upper, p <= self.upper, p < self.upper)
        return bool(np.all(lo_ok & hi_ok))

    def in_interior(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p > self.lower) and np.all(p < self.upper))

    def require_interior(self, p):
        if not self.in_interior(p):
            raise OutsideDomain(f"point {np.asarray(p)} is not interior to the chart box")

    def check_point(self, p):
        """Validate the metric and vertical frame at ``p``; return ``(g, Z)``."""
        self.require_interior(p)
        g = self.g(p)
        if not np.allclose(g, g.T, atol=1e-12, rtol=0):
            raise DegenerateMetric("metric is not symmetric")
        if np.linalg.eigvalsh(g)[0] <= EIG_FLOOR:
            raise DegenerateMetric(f"metric not positive definite at {np.asarray(p)}")
        Z = self.Z(p)
        G = Z.T @ g @ Z
        d = np.diag(G)
        # scale-free test: Hadamard ratio of the Gram matrix
        if np.any(d <= 0) or np.linalg.det(G) / np.prod(d) <= GRAM_FLOOR:
            raise SingularVerticalFrame(f"vertical frame degenerate at {np.asarray(p)}")
        return g, Z


def project(chart: FoliatedChart, p, u) -> SplitVector:
    """Split ``u`` into its g-orthogonal horizontal and vertical parts at ``p``."""
    g, Z = chart.check_point(p)
    u = _as_vec(u)
    coeff = np.linalg.solve(Z.T @ g @ Z, Z.T @ g @ u)
    v_part = Z @ coeff
    return SplitVector(np.asarray(p, float), u.copy(), u - v_part, v_part)


def adapted_frame(chart: FoliatedChart, p) -> AdaptedFrame:
    """Deterministic adapted orthonormal frame (vertical Gram-Schmidt first)."""
    g, _ = chart.check_point(p)
    E = chart.frame_matrix(p)
    n = chart.dim_horizontal
    # the seed chosen at the reference point must still be usable here
    V = E[:, n:]
    for k in chart.h_seed:
        e = np.zeros(chart.dim_total)
        e[k] = 1.0
        r = e - V @ (V.T @ g @ e)
        if np.sqrt(max(r @ g @ r, 0.0)) < SKIP_NORM:
            raise SingularVerticalFrame(f"coordinate vector {k} is vertical at {np.asarray(p)}")
    return AdaptedFrame(np.asarray(p, float), E, n)


def volume_density(chart: FoliatedChart, p) -> float:
    g = chart.g(p)
    det = np.linalg.det(g)
    if det <= 0 or np.linalg.eigvalsh(g)[0] <= EIG_FLOOR:
        raise DegenerateMetric(f"metric not positive definite at {np.asarray(p)}")
    return float(np.sqrt(det))


def lie_derivative_metric(g, dg, X, dX):
    """Matrix of ``(L_X g)_ij`` from point values and coordinate Jacobians.

    ``dg[i, j, k] = d_k g_ij`` and ``dX[i, k] = d_k X^i``.
    """
    return (jnp.einsum("ijk,k->ij", dg, X)
            + jnp.einsum("kj,ki->ij", g, dX)
            + jnp.einsum("ik,kj->ij", g, dX))


def _bundle_like_kernel(chart):
    n = chart.dim_horizontal

    def vertical_field(coeffs):
        return lambda q: chart.frame_fn(q)[:, n:] @ coeffs

    def kernel(p):
        g = chart.metric_fn(p)
        dg = chart.derivative(chart.metric_fn)(p)
        E = chart.frame_fn(p)
        EH = E[:, :n]
        out = []
        for a in range(chart.dim_vertical):
            c = jnp.zeros(chart.dim_vertical).at[a].set(1.0)
            Zf = vertical_field(c)
            L = lie_derivative_metric(g, dg, Zf(p), chart.derivative(Zf)(p))
            out.append(EH.T @ L @ EH)
        return jnp.stack(out)

    return jax.jit(kernel)


def check_bundle_like(chart: FoliatedChart, sample_points=None, sample_count=50,
                      seed=0, tol=1e-10) -> BundleLikeReport:
    """Largest |(L_Z g)(X, X)| over samples, unit horizontal X and unit vertical Z.

    For each point the supremum over unit ``X`` is the spectral radius of the
    horizontal block of ``L_Z g``; ``Z`` runs over the orthonormal vertical
    frame and a few random unit combinations of it.
    """
    rng = np.random.default_rng(seed)
    if sample_points is None:
        sample_points = sample_interior(chart, sample_count, rng)
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    kern = getattr(chart, "_bundle_kernel", None)
    if kern is None:
        kern = _bundle_like_kernel(chart)
        chart._bundle_kernel = kern
    residuals = []
    for p in pts:
        chart.check_point(p)
        blocks = np.asarray(kern(jnp.asarray(p)))
        combos = [np.eye(chart.dim_vertical)[a] for a in range(chart.dim_vertical)]
        for _ in range(3):
            c = rng.normal(size=chart.dim_vertical)
            combos.append(c / np.linalg.norm(c))
        worst = 0.0
        for c in combos:
            B = np.einsum("a,aij->ij", c, blocks)
            worst = max(worst, float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (B + B.T))))))
        residuals.append(worst)
    residuals = np.asarray(residuals)
    mx = float(residuals.max()) if residuals.size else 0.0
    return BundleLikeReport(mx, mx < tol, tol, residuals, pts)


def sample_interior(chart: FoliatedChart, count, rng, box=None):
    """Uniform samples in ``box`` (default: a finite sub-box of the chart)."""
    if box is None:
        lo, hi = chart.sampling_box
    else:
        lo, hi = (np.asarray(b, float) for b in box)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("sampling box must be finite")
    return lo + (hi - lo) * rng.random((count, chart.dim_total))
