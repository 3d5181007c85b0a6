"""Geometry induced by a diffusion model in a single global chart.

A diffusion ``dX = b dt + sigma dW`` equips its state space with the
(possibly degenerate) cometric ``alpha = sigma sigma^T`` on covectors.
A user-supplied Riemannian metric ``g`` that is a generalized inverse of
``alpha`` (``alpha g alpha = alpha``) determines a torsion-free connection
whose Christoffel symbols solve

    sum_s Gamma^s_ij g_sk = (1/2) { d_i (g alpha g)_jk
                                  + d_j (g alpha g)_ik
                                  - d_k (g alpha g)_ij }.

When ``alpha`` is invertible and ``g = alpha^{-1}`` this is the classical
Levi-Civita formula for ``g``.  This module provides that connection, the
orthogonal kernel/range splitting behind it, geodesic exponential maps, and
the small tensor operations (second fundamental form, energy density) needed
by the location-parameter pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._numutil import fd4_partials, max_abs, symmetrize
from .errors import (
    ChartEscape,
    DimensionMismatch,
    RankDeficiencyAmbiguous,
    SingularMetric,
    ZeroVelocity,
)

__all__ = [
    "ModelSpec",
    "Connector",
    "MapSpec",
    "Splitting",
    "alpha",
    "check_generalized_inverse",
    "connector",
    "connector_apply",
    "sub_riemannian_splitting",
    "exp_map",
    "exp_map_connector",
    "second_fundamental_form",
    "energy_density",
]


@dataclass(frozen=True)
class ModelSpec:
    """A diffusion model in one global chart.

    Parameters
    ----------
    dim_p : int
        Chart dimension.
    drift_b : callable
        ``x -> (p,)`` drift coefficient.
    diffusion_sigma : callable
        ``x -> (p, p)`` diffusion coefficient; columns index noise channels.
        Models driven by fewer than ``p`` channels zero-pad the remaining
        columns, which leaves ``alpha`` unchanged.
    metric_g : callable
        ``x -> (p, p)`` symmetric positive-definite metric tensor satisfying
        the generalized-inverse identity ``alpha g alpha = alpha``.
    analytic_metric_derivative : callable, optional
        ``x -> (p, p, p)`` with ``[l, i, j] = d g_ij / d x_l``.  When absent,
        metric derivatives are taken by 4th-order central differences.
    analytic_connector : callable, optional
        ``x -> Connector``.  Bypasses the finite-difference Christoffel
        computation entirely.
    fd_step : float
        Relative finite-difference step in chart units.
    """

    dim_p: int
    drift_b: Callable[[np.ndarray], np.ndarray]
    diffusion_sigma: Callable[[np.ndarray], np.ndarray]
    metric_g: Callable[[np.ndarray], np.ndarray]
    analytic_metric_derivative: Callable[[np.ndarray], np.ndarray] | None = None
    analytic_connector: Callable[[np.ndarray], "Connector"] | None = None
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.dim_p < 1:
            raise DimensionMismatch("dim_p must be a positive integer")
        if not self.fd_step > 0.0:
            raise DimensionMismatch("fd_step must be positive")

    def validate_at(self, x: np.ndarray, tol: float = 1e-9) -> None:
        """Check the model invariants at a probe point.

        Raises :class:`DimensionMismatch` on shape violations and
        :class:`SingularMetric` on metric defects (asymmetry, loss of
        positive semi-definiteness, failed generalized-inverse identity).
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim_p,):
            raise DimensionMismatch("point has shape %s, expected (%d,)" % (x.shape, self.dim_p))
        g = np.asarray(self.metric_g(x), dtype=float)
        if g.shape != (self.dim_p, self.dim_p):
            raise DimensionMismatch("metric_g returned shape %s" % (g.shape,))
        if max_abs(g - g.T) > 1e-12 * max(1.0, max_abs(g)):
            raise SingularMetric("metric_g is not symmetric at probe point")
        a = alpha(self, x)
        w = np.linalg.eigvalsh(a)
        if w[0] < -tol * max(1.0, w[-1]):
            raise SingularMetric("alpha is not positive semi-definite at probe point")
        ok, residual = check_generalized_inverse(self, x, tol * max(1.0, max_abs(a)))
        if not ok:
            raise SingularMetric(
                "metric_g fails the generalized-inverse identity (residual %.3e)" % residual
            )


@dataclass(frozen=True)
class Connector:
    """Christoffel symbols at a fixed point: ``coeffs[k, i, j] = Gamma^k_ij``."""

    coeffs: np.ndarray
    point: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 3 or c.shape[0] != c.shape[1] or c.shape[1] != c.shape[2]:
            raise DimensionMismatch("connector coefficients must have shape (p, p, p)")

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]


@dataclass(frozen=True)
class MapSpec:
    """A C^2 target map from the model chart into a q-dimensional chart.

    ``target_connector`` maps a target point to the ``(q, q, q)`` Christoffel
    array of the target geometry; ``None`` declares the target flat, in which
    case geodesics are straight lines.
    """

    dim_q: int
    psi: Callable[[np.ndarray], np.ndarray]
    d_psi: Callable[[np.ndarray], np.ndarray]
    d2_psi: Callable[[np.ndarray], np.ndarray]
    target_connector: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def identity(cls, dim: int, target_connector=None) -> "MapSpec":
        """Identity chart map; flat target unless a connector is supplied."""
        eye = np.eye(dim)
        zeros = np.zeros((dim, dim, dim))
        return cls(
            dim_q=dim,
            psi=lambda x: np.asarray(x, dtype=float).copy(),
            d_psi=lambda x: eye.copy(),
            d2_psi=lambda x: zeros.copy(),
            target_connector=target_connector,
        )


@dataclass(frozen=True)
class Splitting:
    """Kernel/range splitting of the cotangent space at a point.

    ``kernel_basis`` spans ``Ker(alpha)``; ``f_basis`` spans its orthogonal
    complement under the ambient dual metric; ``alpha_circ`` is the invertible
    extension of ``alpha`` whose inverse is a generalized inverse of ``alpha``.
    """

    kernel_basis: np.ndarray
    f_basis: np.ndarray
    alpha_circ: np.ndarray
    rank: int = 0


def alpha(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Diffusion-variance cometric ``sigma(x) sigma(x)^T`` (symmetric PSD)."""
    s = np.asarray(model.diffusion_sigma(x), dtype=float)
    if s.shape != (model.dim_p, model.dim_p):
        raise DimensionMismatch(
            "diffusion_sigma returned shape %s, expected (%d, %d)"
            % (s.shape, model.dim_p, model.dim_p)
        )
    return s @ s.T


def check_generalized_inverse(model: ModelSpec, x: np.ndarray, tol: float) -> tuple[bool, float]:
    """Residual of ``alpha g alpha = alpha`` in the max-entry norm.

    Returns ``(residual <= tol, residual)``.
    """
    if not tol > 0.0:
        raise DimensionMismatch("tolerance must be positive")
    a = alpha(model, x)
    g = np.asarray(model.metric_g(x), dtype=float)
    residual = max_abs(a @ g @ a - a)
    return residual <= tol, residual


def _metric_product_derivative(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Derivative tensor ``d[l, i, j] = d_l (g alpha g)_ij``, exactly symmetric in (i, j).

    Uses the product rule with the analytic metric derivative when available
    (the cometric derivative still comes from finite differences of
    ``sigma sigma^T``); otherwise differences the full product.
    """
    x = np.asarray(x, dtype=float)
    if model.analytic_metric_derivative is not None:
        g = np.asarray(model.metric_g(x), dtype=float)
        a = alpha(model, x)
        dg = np.asarray(model.analytic_metric_derivative(x), dtype=float)
        da = fd4_partials(lambda y: alpha(model, y), x, model.fd_step)
        dm = dg @ (a @ g) + np.einsum("ij,ljk,km->lim", g, da, g) + (g @ a) @ dg
    else:

        def product(y):
            gy = np.asarray(model.metric_g(y), dtype=float)
            m = gy @ alpha(model, y) @ gy
            return 0.5 * (m + m.T)

        dm = fd4_partials(product, x, model.fd_step)
    # enforce bitwise symmetry of each d_l(g alpha g) so the Christoffel
    # symbols come out exactly symmetric in their lower indices
    return 0.5 * (dm + np.transpose(dm, (0, 2, 1)))


def connector(model: ModelSpec, x: np.ndarray) -> Connector:
    """Christoffel symbols of the model's connection at ``x``.

    Solves the defining linear system against the metric, so ``g(x)`` must be
    invertible as a matrix; raises :class:`SingularMetric` otherwise.  The
    returned coefficients are exactly symmetric in their lower indices.
    """
    x = np.asarray(x, dtype=float)
    if model.analytic_connector is not None:
        return model.analytic_connector(x)
    g = symmetrize(np.asarray(model.metric_g(x), dtype=float))
    w = np.linalg.eigvalsh(g)
    if w[0] <= 1e-12 * max(abs(w[-1]), 1e-300):
        raise SingularMetric(
            "metric is singular to working precision (eigenvalues %.3e .. %.3e)" % (w[0], w[-1])
        )
    dm = _metric_product_derivative(model, x)
    # c[i, j, k] = (1/2)(d_i m_jk + d_j m_ik - d_k m_ij); exactly symmetric in (i, j)
    c = 0.5 * (
        np.einsum("ijk->ijk", dm) + np.einsum("jik->ijk", dm) - np.einsum("kij->ijk", dm)
    )
    ginv = np.linalg.inv(g)
    coeffs = np.einsum("ijk,ks->sij", c, ginv)
    return Connector(coeffs=coeffs, point=x)


def connector_apply(c: Connector, t: np.ndarray) -> np.ndarray:
    """Contract Christoffel symbols against a symmetric 2-tensor.

    Returns the vector with entries ``sum_ij Gamma^k_ij T^ij``.
    """
    t = np.asarray(t, dtype=float)
    p = c.dim
    if t.shape != (p, p):
        raise DimensionMismatch("tensor has shape %s, expected (%d, %d)" % (t.shape, p, p))
    return np.einsum("kij,ij->k", c.coeffs, t)


def sub_riemannian_splitting(
    alpha_matrix: np.ndarray,
    ambient_metric: np.ndarray,
    rank: int | None = None,
    gap_ratio: float = 1e3,
) -> Splitting:
    """Split the cotangent space into ``Ker(alpha)`` and its complement.

    Parameters
    ----------
    alpha_matrix : (p, p) PSD array
        The cometric at a point.
    ambient_metric : (p, p) SPD array
        Auxiliary Riemannian metric on tangent vectors; its inverse acts as
        the dual metric on covectors.  Identity is the usual choice.
    rank : int, optional
        Explicit rank override for callers that know the constant rank.
    gap_ratio : float
        Minimum ratio between the smallest retained and largest discarded
        singular value before the rank is considered unambiguous.

    Returns
    -------
    Splitting
        With ``alpha_circ`` acting as the ambient dual metric on the kernel
        and as ``alpha`` on the complement, so that ``alpha_circ^{-1}`` is a
        generalized inverse of ``alpha``.
    """
    a = symmetrize(np.asarray(alpha_matrix, dtype=float))
    p = a.shape[0]
    gm = np.asarray(ambient_metric, dtype=float)
    if gm.shape != (p, p):
        raise DimensionMismatch("ambient metric has shape %s, expected (%d, %d)" % (gm.shape, p, p))
    wg = np.linalg.eigvalsh(symmetrize(gm))
    if wg[0] <= 0.0:
        raise SingularMetric("ambient metric must be symmetric positive definite")

    w, q = np.linalg.eigh(a)  # ascending
    sv = w[::-1]
    if rank is None:
        if sv[0] <= 0.0:
            r = 0
        else:
            # eigenvalues below 1e-6 of the top are treated as numerical zeros;
            # the retained/discarded ratio must still show a clear gap
            r = int(np.sum(sv > 1e-6 * sv[0]))
            if r < p and sv[r] > 0.0 and sv[r - 1] / sv[r] < gap_ratio:
                raise RankDeficiencyAmbiguous(
                    "no clear rank gap in alpha spectrum (ratio %.3e at rank %d); "
                    "pass an explicit rank" % (sv[r - 1] / sv[r], r)
                )
    else:
        r = int(rank)
        if not 0 <= r <= p:
            raise DimensionMismatch("explicit rank %d outside [0, %d]" % (r, p))

    kernel = q[:, : p - r]  # eigenvectors of the p-r smallest eigenvalues
    beta = np.linalg.inv(symmetrize(gm))
    if r == 0:
        f_basis = np.zeros((p, 0))
        alpha_circ = beta.copy()
    elif r == p:
        f_basis = np.eye(p)
        alpha_circ = a.copy()
    else:
        # F = Euclidean orthocomplement of beta * Ker(alpha)
        m = beta @ kernel
        u, _, _ = np.linalg.svd(m, full_matrices=True)
        f_basis = u[:, p - r :]
        basis = np.hstack([kernel, f_basis])
        sel = np.linalg.inv(basis)
        alpha_circ = beta @ kernel @ sel[: p - r, :] + a @ f_basis @ sel[p - r :, :]
    return Splitting(kernel_basis=kernel, f_basis=f_basis, alpha_circ=alpha_circ, rank=r)


def exp_map_connector(
    connector_fn: Callable[[np.ndarray], np.ndarray] | None,
    x: np.ndarray,
    v: np.ndarray,
    steps: int = 64,
) -> np.ndarray:
    """Geodesic exponential map for an arbitrary Christoffel field.

    Integrates ``x'' + Gamma(x)(x', x') = 0`` over unit parameter with the
    classical 4th-order one-step method.  ``connector_fn`` returns the
    ``(q, q, q)`` Christoffel array at a point; ``None`` means geodesics are
    straight lines and the endpoint ``x + v`` is returned exactly.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != v.shape:
        raise DimensionMismatch("point and tangent vector shapes differ")
    if steps < 1:
        raise DimensionMismatch("steps must be a positive integer")
    if connector_fn is None:
        return x + v

    def rhs(state):
        pos, vel = state
        gam = np.asarray(connector_fn(pos), dtype=float)
        return np.stack([vel, -np.einsum("kij,i,j->k", gam, vel, vel)])

    state = np.stack([x, v])
    h = 1.0 / steps
    for _ in range(steps):
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * h * k1)
        k3 = rhs(state + 0.5 * h * k2)
        k4 = rhs(state + h * k3)
        state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(state)):
            raise ChartEscape("geodesic left the chart: non-finite iterate")
    return state[0]


def exp_map(model: ModelSpec, x: np.ndarray, v: np.ndarray, steps: int = 64) -> np.ndarray:
    """Geodesic exponential map under the model's own connection."""
    return exp_map_connector(lambda y: connector(model, y).coeffs, x, v, steps)


def second_fundamental_form(
    mapspec: MapSpec, connector_n: Connector, x: np.ndarray, t: np.ndarray
) -> np.ndarray:
    """Connection-corrected Hessian of the target map, contracted with ``t``.

    Computes ``(D^2 psi - D psi . Gamma + Gammabar(D psi ., D psi .))(t)``
    where ``Gamma`` is the domain connector and ``Gammabar`` the target one.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    p = connector_n.dim
    if t.shape != (p, p):
        raise DimensionMismatch("tensor has shape %s, expected (%d, %d)" % (t.shape, p, p))
    j = np.asarray(mapspec.d_psi(x), dtype=float)
    if j.shape != (mapspec.dim_q, p):
        raise DimensionMismatch("d_psi returned shape %s" % (j.shape,))
    d2 = np.asarray(mapspec.d2_psi(x), dtype=float)
    out = np.einsum("qij,ij->q", d2, t) - j @ connector_apply(connector_n, t)
    if mapspec.target_connector is not None:
        y = np.asarray(mapspec.psi(x), dtype=float)
        gbar = np.asarray(mapspec.target_connector(y), dtype=float)
        out = out + np.einsum("qab,ab->q", gbar, j @ t @ j.T)
    return out


def energy_density(
    mapspec: MapSpec, metric_h: np.ndarray, model: ModelSpec, x: np.ndarray
) -> float:
    """Energy density of the target map under the diffusion-variance cometric.

    ``(1/2) sum_bg h_bg (J alpha J^T)^bg``; well defined (and possibly zero)
    even when the cometric is degenerate.
    """
    x = np.asarray(x, dtype=float)
    h = np.asarray(metric_h, dtype=float)
    j = np.asarray(mapspec.d_psi(x), dtype=float)
    pushed = j @ alpha(model, x) @ j.T
    if h.shape != pushed.shape:
        raise DimensionMismatch("metric_h has shape %s, expected %s" % (h.shape, pushed.shape))
    val = 0.5 * float(np.sum(h * pushed))
    return max(val, 0.0)
