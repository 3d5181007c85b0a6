"""Deterministic flow machinery: the intrinsic vector field and its derivative flow.

The drift of a diffusion, corrected by the connection, defines the intrinsic
vector field

    xi^k(x) = b^k(x) + (1/2) sum_ij alpha^ij(x) Gamma^k_ij(x).

Its flow ``x_t``, the derivative flow ``tau_s^t`` (the linearization
transporting tangent vectors from time s to t), and second derivatives of
``xi`` are the deterministic inputs to the location-parameter formula.

``tau`` is advanced per step as ``exp{(dt/2) [Dxi(x_u) + Dxi(x_t)]}``, the
midpoint-exponential scheme; this is exact for commuting Jacobians and
second-order accurate otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.linalg import expm

from ._numutil import fd2_second_partials, fd4_partials, require_finite, rk4_step
from .errors import DimensionMismatch
from .geometry import ModelSpec, alpha, connector, connector_apply

__all__ = [
    "VectorFieldSpec",
    "FlowGrid",
    "xi_from_model",
    "fd_vectorfield",
    "integrate_flow",
    "derivative_flow",
]


@dataclass(frozen=True)
class VectorFieldSpec:
    """A vector field with first and second derivative access.

    ``d2_xi_apply(x, t)`` returns ``sum_ij t^ij d^2 xi / dx_i dx_j``; only the
    symmetric part of ``t`` matters and the map is linear in ``t``.
    ``provenance`` records whether derivatives are analytic or
    finite-difference.
    """

    xi: Callable[[np.ndarray], np.ndarray]
    d_xi: Callable[[np.ndarray], np.ndarray]
    d2_xi_apply: Callable[[np.ndarray, np.ndarray], np.ndarray]
    provenance: str = "finite-difference"


@dataclass(frozen=True)
class FlowGrid:
    """A uniform time grid carrying flow points and derivative-flow matrices.

    ``tau_step[i]`` transports tangent vectors from ``times[i]`` to
    ``times[i+1]``; ``tau_to_end[i]`` transports from ``times[i]`` to the
    final time.  ``tau_to_end[-1]`` is the identity and the two-parameter
    semigroup property holds by construction.
    """

    times: np.ndarray
    points: np.ndarray
    tau_step: np.ndarray | None = None
    tau_to_end: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def tau_from_start(self) -> np.ndarray:
        """Accumulated transports ``tau_0^{t_i}`` for every grid time."""
        if self.tau_step is None:
            raise DimensionMismatch("grid has no derivative-flow matrices; run derivative_flow")
        p = self.dim
        out = np.empty((len(self.times), p, p))
        out[0] = np.eye(p)
        for i in range(self.n_steps):
            out[i + 1] = self.tau_step[i] @ out[i]
        return out


def fd_vectorfield(xi: Callable[[np.ndarray], np.ndarray], fd_step: float = 1e-5) -> VectorFieldSpec:
    """Wrap a bare vector field with finite-difference derivatives.

    First derivatives use 4th-order central differences with relative step
    ``fd_step``; second derivatives use plain central stencils at the larger
    step ``sqrt(fd_step)``, which balances truncation against roundoff.
    """
    step2 = float(np.sqrt(fd_step))

    def d_xi(x):
        # fd4_partials gives d[l, k] = d xi_k / d x_l; Jacobian is its transpose
        return fd4_partials(xi, np.asarray(x, dtype=float), fd_step).T

    def d2_xi_apply(x, t):
        t = np.asarray(t, dtype=float)
        d2 = fd2_second_partials(xi, np.asarray(x, dtype=float), step2)
        return np.einsum("ijk,ij->k", d2, t)

    return VectorFieldSpec(xi=xi, d_xi=d_xi, d2_xi_apply=d2_xi_apply, provenance="finite-difference")


def xi_from_model(
    model: ModelSpec,
    d_xi: Callable[[np.ndarray], np.ndarray] | None = None,
    d2_xi_apply: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
) -> VectorFieldSpec:
    """Intrinsic vector field of a diffusion model.

    ``xi = b + (1/2) Gamma(alpha)`` pointwise.  Derivatives default to finite
    differences of that composite; analytic overrides may be supplied when
    the model author has closed forms.
    """

    def xi(x):
        x = np.asarray(x, dtype=float)
        b = np.asarray(model.drift_b(x), dtype=float)
        correction = connector_apply(connector(model, x), alpha(model, x))
        return b + 0.5 * correction

    if d_xi is not None and d2_xi_apply is not None:
        return VectorFieldSpec(xi=xi, d_xi=d_xi, d2_xi_apply=d2_xi_apply, provenance="analytic")
    base = fd_vectorfield(xi, model.fd_step)
    return VectorFieldSpec(
        xi=xi,
        d_xi=d_xi if d_xi is not None else base.d_xi,
        d2_xi_apply=d2_xi_apply if d2_xi_apply is not None else base.d2_xi_apply,
        provenance="finite-difference",
    )


def integrate_flow(vf: VectorFieldSpec, x0: np.ndarray, delta: float, n: int) -> FlowGrid:
    """Integrate ``x' = xi(x)`` on a uniform grid over ``[0, delta]`` with RK4."""
    if n < 1:
        raise DimensionMismatch("n must be a positive integer")
    if not delta > 0.0:
        raise DimensionMismatch("delta must be positive")
    x0 = np.asarray(x0, dtype=float)
    times = np.linspace(0.0, delta, n + 1)
    points = np.empty((n + 1, x0.size))
    points[0] = x0
    h = delta / n
    x = x0
    for i in range(n):
        x = rk4_step(vf.xi, x, h)
        require_finite(x, "flow integration at step %d" % (i + 1))
        points[i + 1] = x
    return FlowGrid(times=times, points=points)


def derivative_flow(vf: VectorFieldSpec, grid: FlowGrid) -> FlowGrid:
    """Fill the derivative-flow matrices of an integrated grid.

    Per-step transport ``tau_i^{i+1} = expm((dt/2) (Dxi(x_i) + Dxi(x_{i+1})))``,
    accumulated right-to-left into ``tau_to_end``.
    """
    n = grid.n_steps
    p = grid.dim
    jac = np.empty((n + 1, p, p))
    for i in range(n + 1):
        jac[i] = np.asarray(vf.d_xi(grid.points[i]), dtype=float)
    require_finite(jac, "vector-field Jacobians")
    tau_step = np.empty((n, p, p))
    for i in range(n):
        dt = grid.times[i + 1] - grid.times[i]
        tau_step[i] = expm(0.5 * dt * (jac[i] + jac[i + 1]))
    tau_to_end = np.empty((n + 1, p, p))
    tau_to_end[n] = np.eye(p)
    for i in range(n - 1, -1, -1):
        tau_to_end[i] = tau_to_end[i + 1] @ tau_step[i]
    require_finite(tau_to_end, "derivative-flow accumulation")
    return replace(grid, tau_step=tau_step, tau_to_end=tau_to_end)
