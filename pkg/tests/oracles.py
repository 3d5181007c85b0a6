"""Independent reference implementations used as test oracles.

Everything here is deliberately written the dumb way (scalar loops, Taylor
series, closed forms worked by hand) and kept separate from the library so
the two sides of each comparison share no code path.
"""

from __future__ import annotations

import numpy as np


def taylor_expm(m: np.ndarray, terms: int = 24, squarings: int = 10) -> np.ndarray:
    """Matrix exponential by scaling, truncated Taylor series, and squaring."""
    m = np.asarray(m, dtype=float)
    scaled = m / (2.0**squarings)
    result = np.eye(m.shape[0])
    term = np.eye(m.shape[0])
    for k in range(1, terms + 1):
        term = term @ scaled / k
        result = result + term
    for _ in range(squarings):
        result = result @ result
    return result


def loop_alpha(sigma: np.ndarray) -> np.ndarray:
    """sigma sigma^T entry by entry."""
    p = sigma.shape[0]
    out = np.zeros((p, p))
    for i in range(p):
        for k in range(p):
            acc = 0.0
            for j in range(p):
                acc += sigma[i, j] * sigma[k, j]
            out[i, k] = acc
    return out


def loop_connector_apply(coeffs: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Triple-loop contraction sum_ij Gamma^k_ij T^ij."""
    p = coeffs.shape[0]
    out = np.zeros(p)
    for k in range(p):
        acc = 0.0
        for i in range(p):
            for j in range(p):
                acc += coeffs[k, i, j] * t[i, j]
        out[k] = acc
    return out


def loop_energy_density(h: np.ndarray, j: np.ndarray, a: np.ndarray) -> float:
    """Double-loop (1/2) sum h_bg (J alpha J^T)^bg."""
    pushed = j @ a @ j.T
    q = h.shape[0]
    acc = 0.0
    for b in range(q):
        for g in range(q):
            acc += h[b, g] * pushed[b, g]
    return 0.5 * acc


def levi_civita_from_metric(metric_fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Classical Levi-Civita symbols from the metric alone, by central differences.

    Gamma^s_ij = (1/2) g^{sk} (d_i g_jk + d_j g_ik - d_k g_ij).
    """
    x = np.asarray(x, dtype=float)
    p = x.size
    dg = np.zeros((p, p, p))
    for l in range(p):
        e = np.zeros(p)
        e[l] = h * (1.0 + abs(x[l]))
        dg[l] = (metric_fn(x + e) - metric_fn(x - e)) / (2.0 * e[l])
    ginv = np.linalg.inv(metric_fn(x))
    out = np.zeros((p, p, p))
    for s in range(p):
        for i in range(p):
            for j in range(p):
                acc = 0.0
                for k in range(p):
                    acc += 0.5 * ginv[s, k] * (dg[i][j, k] + dg[j][i, k] - dg[k][i, j])
                out[s, i, j] = acc
    return out


def polar_levi_civita(x: np.ndarray) -> np.ndarray:
    """Closed-form Christoffel symbols of the plane in polar coordinates."""
    r = float(x[0])
    out = np.zeros((2, 2, 2))
    out[0, 1, 1] = -r
    out[1, 0, 1] = 1.0 / r
    out[1, 1, 0] = 1.0 / r
    return out


def polar_to_cart(x: np.ndarray) -> np.ndarray:
    r, th = float(x[0]), float(x[1])
    return np.array([r * np.cos(th), r * np.sin(th)])


def cart_to_polar(c: np.ndarray) -> np.ndarray:
    return np.array([np.hypot(c[0], c[1]), np.arctan2(c[1], c[0])])


def polar_tangent_to_cart(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Push a polar-coordinate tangent vector to Cartesian components."""
    r, th = float(x[0]), float(x[1])
    jac = np.array([[np.cos(th), -r * np.sin(th)], [np.sin(th), r * np.cos(th)]])
    return jac @ np.asarray(v, dtype=float)


def polar_geodesic_endpoint(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Exact unit-time geodesic endpoint: a Cartesian straight line mapped back."""
    start = polar_to_cart(x)
    vel = polar_tangent_to_cart(x, v)
    return cart_to_polar(start + vel)


def ou_mean(x0: float, kappa: float, t) -> np.ndarray:
    return x0 * np.exp(-kappa * np.asarray(t, dtype=float))


def ou_chi(s: float, kappa: float, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return s * s * (1.0 - np.exp(-2.0 * kappa * t)) / (2.0 * kappa)


def tau_ode_reference(d_xi, points: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Joint RK4 integration of the forward transport ODE d tau/dt = Dxi(x_t) tau.

    Integrates on the given grid with linear interpolation of the Jacobian in
    each step, returning ``tau_0^{t_i}`` for every grid time.
    """
    n = len(times) - 1
    p = points.shape[1]
    jacs = np.array([d_xi(points[i]) for i in range(n + 1)])
    tau = np.eye(p)
    out = np.empty((n + 1, p, p))
    out[0] = tau
    for i in range(n):
        h = times[i + 1] - times[i]
        a0, a1 = jacs[i], jacs[i + 1]

        def jac_at(frac):
            return a0 + frac * (a1 - a0)

        k1 = a0 @ tau
        k2 = jac_at(0.5) @ (tau + 0.5 * h * k1)
        k3 = jac_at(0.5) @ (tau + 0.5 * h * k2)
        k4 = a1 @ (tau + h * k3)
        tau = tau + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = tau
    return out


def random_spd(rng: np.random.Generator, p: int, scale: float = 1.0) -> np.ndarray:
    m = rng.normal(size=(p, p))
    return scale * (m @ m.T + p * np.eye(p))


def random_psd_rank(rng: np.random.Generator, p: int, r: int) -> np.ndarray:
    m = rng.normal(size=(p, r))
    return m @ m.T
