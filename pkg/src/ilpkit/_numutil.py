"""Internal numeric helpers: finite differences, RK4 stepping, PSD repair."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NonFiniteState


def max_abs(a) -> float:
    """Largest absolute entry of an array (0.0 for empty input)."""
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def fd4_partials(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float) -> np.ndarray:
    """Partial derivatives of an array-valued function by 4th-order central differences.

    Returns ``d`` with ``d[l] = ∂f/∂x_l`` evaluated at ``x``.  The step in
    coordinate ``l`` is ``step * (1 + |x_l|)`` so that chart units of any
    magnitude are differenced at a sensible relative scale.
    """
    x = np.asarray(x, dtype=float)
    base = np.asarray(f(x), dtype=float)
    out = np.empty((x.size,) + base.shape)
    for l in range(x.size):
        h = step * (1.0 + abs(x[l]))
        e = np.zeros_like(x)
        e[l] = h
        fp2 = np.asarray(f(x + 2.0 * e), dtype=float)
        fp1 = np.asarray(f(x + e), dtype=float)
        fm1 = np.asarray(f(x - e), dtype=float)
        fm2 = np.asarray(f(x - 2.0 * e), dtype=float)
        # difference-first grouping cancels exactly for constant functions
        out[l] = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * h)
    return out


def fd2_second_partials(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float) -> np.ndarray:
    """All second partials of an array-valued function by central differences.

    Returns ``d2`` with ``d2[i, j] = ∂²f/∂x_i∂x_j`` (symmetric in ``i, j`` by
    construction).  Steps scale as ``step * (1 + |x_i|)`` per coordinate.
    """
    x = np.asarray(x, dtype=float)
    base = np.asarray(f(x), dtype=float)
    p = x.size
    h = step * (1.0 + np.abs(x))
    d2 = np.empty((p, p) + base.shape)
    for i in range(p):
        ei = np.zeros_like(x)
        ei[i] = h[i]
        fp = np.asarray(f(x + ei), dtype=float)
        fm = np.asarray(f(x - ei), dtype=float)
        d2[i, i] = (fp - 2.0 * base + fm) / (h[i] * h[i])
    for i in range(p):
        ei = np.zeros_like(x)
        ei[i] = h[i]
        for j in range(i + 1, p):
            ej = np.zeros_like(x)
            ej[j] = h[j]
            fpp = np.asarray(f(x + ei + ej), dtype=float)
            fpm = np.asarray(f(x + ei - ej), dtype=float)
            fmp = np.asarray(f(x - ei + ej), dtype=float)
            fmm = np.asarray(f(x - ei - ej), dtype=float)
            val = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
            d2[i, j] = val
            d2[j, i] = val
    return d2


def rk4_step(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, h: float) -> np.ndarray:
    """One classical 4th-order step of an autonomous ODE y' = f(y)."""
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def require_finite(a: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NonFiniteState("non-finite values encountered in %s" % context)


def psd_fix(m: np.ndarray, rel_tol: float = 1e-10) -> np.ndarray:
    """Symmetrize a near-PSD matrix and clip spectral noise.

    Eigenvalues below ``-rel_tol * trace`` indicate genuine loss of positive
    semi-definiteness and raise :class:`NonFiniteState`; negative eigenvalues
    above that floor are treated as float drift and clipped to zero.
    """
    s = symmetrize(np.asarray(m, dtype=float))
    require_finite(s, "covariance propagation")
    w, q = np.linalg.eigh(s)
    floor = -rel_tol * max(float(np.trace(s)), 0.0)
    if w[0] < floor:
        raise NonFiniteState(
            "covariance matrix lost positive semi-definiteness "
            "(min eigenvalue %.3e, floor %.3e)" % (w[0], floor)
        )
    if w[0] < 0.0:
        w = np.maximum(w, 0.0)
        s = (q * w) @ q.T
        s = symmetrize(s)
    return s
