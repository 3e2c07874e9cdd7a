"""Adaptive Dormand-Prince 5(4) integrator with PI step control and Hermite dense output."""
from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from .errors import LeftDomain, StepFailure

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

SAFETY = 0.9
ALPHA = 0.7 / 5
BETA = 0.4 / 5
MIN_FACTOR, MAX_FACTOR = 0.2, 5.0


def make_stepper(rhs):
    """Jitted single DP step ``(t, y, h, f0) -> (y5, err, f1)`` for ``rhs(t, y)``."""

    def step(t, y, h, f0):
        ks = [f0]
        for s in range(1, 7):
            incr = sum(_A[s][j] * ks[j] for j in range(s))
            ks.append(rhs(t + _C[s] * h, y + h * incr))
        y5 = y + h * sum(_B5[j] * ks[j] for j in range(6))
        err = h * sum(_E[j] * ks[j] for j in range(7))
        return y5, err, ks[6]

    return jax.jit(step), jax.jit(rhs)


def make_numpy_stepper(rhs):
    """Same contract as :func:`make_stepper` for a numpy ``rhs``.

    Useful when ``rhs`` wraps an expensive jitted kernel: only the kernel is
    compiled, not seven inlined copies of it.
    """

    def step(t, y, h, f0):
        y, f0 = np.asarray(y), np.asarray(f0)
        ks = [f0]
        for s in range(1, 7):
            incr = sum(_A[s][j] * ks[j] for j in range(s))
            ks.append(rhs(t + _C[s] * h, y + h * incr))
        y5 = y + h * sum(_B5[j] * ks[j] for j in range(6))
        err = h * sum(_E[j] * ks[j] for j in range(7))
        return y5, err, ks[6]

    return step, lambda t, y: rhs(t, np.asarray(y))


@dataclass
class OdeSolution:
    """Accepted steps ``ts`` with states ``ys`` and derivatives ``fs``."""

    ts: np.ndarray
    ys: np.ndarray
    fs: np.ndarray
    rejected: int = 0

    def __call__(self, t):
        t = float(t)
        ts = self.ts
        if t <= ts[0]:
            return self.ys[0].copy()
        if t >= ts[-1]:
            return self.ys[-1].copy()
        i = int(np.searchsorted(ts, t)) - 1
        return hermite(ts[i], ts[i + 1], self.ys[i], self.ys[i + 1], self.fs[i], self.fs[i + 1], t)

    def derivative(self, t):
        t = float(t)
        i = min(max(int(np.searchsorted(self.ts, t)) - 1, 0), len(self.ts) - 2)
        return hermite_derivative(self.ts[i], self.ts[i + 1], self.ys[i], self.ys[i + 1],
                                  self.fs[i], self.fs[i + 1], t)

    def segment_start(self, t):
        """Index of the accepted step at or before ``t``."""
        return min(max(int(np.searchsorted(self.ts, t, side="right")) - 1, 0), len(self.ts) - 1)


def hermite(t0, t1, y0, y1, f0, f1, t):
    h = t1 - t0
    s = (t - t0) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def hermite_derivative(t0, t1, y0, y1, f0, f1, t):
    h = t1 - t0
    s = (t - t0) / h
    d00 = 6 * s * s - 6 * s
    d10 = 3 * s * s - 4 * s + 1
    d01 = -d00
    d11 = 3 * s * s - 2 * s
    return (d00 * y0 + d01 * y1) / h + d10 * f0 + d11 * f1


def _initial_step(rhs_jit, t0, y0, f0, rtol, atol, direction):
    sc = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / sc) ** 2))
    d1 = np.sqrt(np.mean((f0 / sc) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = np.asarray(rhs_jit(t0 + direction * h0, y1))
    d2 = np.sqrt(np.mean(((f1 - f0) / sc) ** 2)) / h0
    h1 = max(1e-6, h0 * 1e-3) if max(d1, d2) <= 1e-15 else (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def solve(stepper, t0, t1, y0, rtol=1e-10, atol=1e-10, inside=None, max_steps=200000,
          first_step=None, max_step=np.inf):
    """Integrate from ``t0`` to ``t1`` with a stepper from :func:`make_stepper`.

    ``inside(y) -> bool`` guards the state; when it fails the exit time is
    located on the dense output and :class:`LeftDomain` is raised.
    """
    step, rhs_jit = stepper
    y = np.asarray(y0, dtype=float)
    t = float(t0)
    direction = 1.0 if t1 >= t0 else -1.0
    f = np.asarray(rhs_jit(t, y))
    ts, ys, fs = [t], [y], [f]
    if t1 == t0:
        return OdeSolution(np.array(ts), np.array(ys), np.array(fs))
    h = first_step or _initial_step(rhs_jit, t, y, f, rtol, atol, direction)
    h = min(h, abs(t1 - t0), max_step)
    err_prev = 1e-4
    rejected = 0
    for _ in range(max_steps):
        if abs(t1 - t) <= 1e-14 * max(1.0, abs(t1)):
            break
        h = min(h, abs(t1 - t), max_step)
        if h < 1e-14 * max(1.0, abs(t)):
            raise StepFailure(f"step size underflow at t={t:.6g}")
        y_new, err, f_new = step(t, y, direction * h, f)
        y_new, err, f_new = np.asarray(y_new), np.asarray(err), np.asarray(f_new)
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        en = float(np.sqrt(np.mean((err / sc) ** 2)))
        if not np.isfinite(en):
            h *= MIN_FACTOR
            rejected += 1
            continue
        if en <= 1.0:
            t_new = t + direction * h
            if abs(t1 - t_new) < 1e-14 * max(1.0, abs(t1)):
                t_new = float(t1)
            if inside is not None and not inside(y_new):
                t_exit = _locate_exit(inside, t, t_new, y, y_new, f, f_new)
                raise LeftDomain(t_exit)
            ts.append(t_new)
            ys.append(y_new)
            fs.append(f_new)
            t, y, f = t_new, y_new, f_new
            en = max(en, 1e-10)
            factor = SAFETY * en ** (-ALPHA) * err_prev ** BETA
            h *= min(MAX_FACTOR, max(MIN_FACTOR, factor))
            err_prev = en
        else:
            rejected += 1
            h *= max(MIN_FACTOR, SAFETY * en ** (-1 / 5))
    else:
        raise StepFailure(f"maximum number of steps ({max_steps}) exceeded")
    return OdeSolution(np.array(ts), np.array(ys), np.array(fs), rejected)


def _locate_exit(inside, t0, t1, y0, y1, f0, f1):
    lo, hi = t0, t1
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if inside(hermite(t0, t1, y0, y1, f0, f1, mid)):
            lo = mid
        else:
            hi = mid
    return hi
