"""Cross-module invariant suite behind the ``validate`` command.

Each check returns a measured residual (or slope) with its threshold; the
suite is deterministic and fast.  Mutation hooks deliberately corrupt a
computation so tests can confirm the corresponding check actually fails:

* ``flip-connector-sign``: negates the tracking connector inside its checks.
* ``swap-tau-composition``: composes derivative-flow factors in the wrong
  order inside the semigroup check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._numutil import max_abs
from .flow import derivative_flow, integrate_flow
from .geometry import alpha as cometric_at
from .ilp import conjugation_residual, covariance_path, ilp_tangent, pullback_covariance
from .mc import RngPolicy, variation_samples
from .models import build_bundle
from .tracking import TS2State, TrackingParams, connector_tracking, ilp_tracking, random_initial_state

__all__ = ["CheckResult", "run_all_checks", "MUTATIONS"]

MUTATIONS = ("flip-connector-sign", "swap-tau-composition")


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    threshold: float
    comparison: str  # "<=" or ">="
    passed: bool
    detail: str = ""

    def row(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return "%-34s %12.4e %2s %12.4e  %s" % (
            self.name,
            self.measured,
            self.comparison,
            self.threshold,
            status,
        )


def _result(name, measured, threshold, comparison="<=", detail="") -> CheckResult:
    ok = measured <= threshold if comparison == "<=" else measured >= threshold
    return CheckResult(name, float(measured), float(threshold), comparison, bool(ok), detail)


def _tracking_setup(seed=101, gamma=52.0):
    bundle = build_bundle("ts2-tracking", {"gamma": gamma})
    rng = np.random.default_rng(seed)
    x0 = random_initial_state(rng).as_vector()
    grid = derivative_flow(bundle.vf, integrate_flow(bundle.vf, x0, 1.0, 25))
    return bundle, x0, grid


def check_tau_semigroup(mutations=()) -> CheckResult:
    """Two-parameter composition of the derivative flow on the tracking model."""
    _, _, grid = _tracking_setup()
    n = grid.n_steps

    def product(i, j):
        out = np.eye(grid.dim)
        for k in range(i, j):
            out = grid.tau_step[k] @ out
        return out

    swap = "swap-tau-composition" in mutations
    worst = 0.0
    for (i, j, k) in [(0, 10, 25), (3, 7, 19), (5, 12, 25), (0, 1, 2)]:
        a = product(j, k)
        b = product(i, j)
        composed = b @ a if swap else a @ b
        worst = max(worst, max_abs(product(i, k) - composed) / max(1.0, max_abs(product(i, k))))
    return _result("tau-semigroup (tracking)", worst, 1e-8)


def check_connector_annihilates_alpha(mutations=()) -> CheckResult:
    """Tracking connector applied to the cometric vanishes; polarized values
    match an independent recomputation."""
    gamma = 52.0
    flip = "flip-connector-sign" in mutations
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        state = random_initial_state(rng)
        x = state.as_vector()

        def conn(z, e):
            val = connector_tracking(state, z, e)
            return -val if flip else val

        # contraction against alpha via basis pairs in the acceleration block
        pv = np.eye(3) - np.outer(state.v, state.v) / float(state.v @ state.v)
        total = np.zeros(6)
        for i in range(3):
            for j in range(3):
                ei = np.zeros(6)
                ej = np.zeros(6)
                ei[3 + i] = 1.0
                ej[3 + j] = 1.0
                total = total + gamma**2 * pv[i, j] * conn(ei, ej)
        worst = max(worst, max_abs(total) / gamma**2)

        # polarized value against an inline recomputation of the closed form
        zeta = _tangent_vector(rng, state)
        eta = _tangent_vector(rng, state)
        n2 = float(state.v @ state.v)
        upper = zeta[3:] * (eta[3:] @ state.v) + eta[3:] * (zeta[3:] @ state.v)
        lower = -(zeta[:3] * (eta[3:] @ state.v) + eta[:3] * (zeta[3:] @ state.v))
        expected = np.concatenate([upper, lower]) / (2.0 * n2)
        scale = max(1e-12, max_abs(expected))
        worst = max(worst, max_abs(conn(zeta, eta) - expected) / scale)
    return _result("connector-annihilates-alpha", worst, 1e-10)


def _tangent_vector(rng, state: TS2State) -> np.ndarray:
    """Random direction tangent to the speed and orthogonality constraints."""
    v, a = state.v, state.a
    zv = rng.normal(size=3)
    zv -= (zv @ v) / (v @ v) * v
    za = rng.normal(size=3)
    za -= ((za @ v) + (zv @ a)) / (v @ v) * v
    return np.concatenate([zv, za])


def check_pullback_conjugation(mutations=()) -> CheckResult:
    """Independently accumulated pullback covariance conjugates back to Xi."""
    bundle = build_bundle("linear-gaussian")
    grid = derivative_flow(bundle.vf, integrate_flow(bundle.vf, bundle.default_x0, 1.0, 4000))
    sigma0 = np.array([[0.3, 0.1], [0.1, 0.2]])
    cov = covariance_path(bundle.model, grid, sigma0)
    pi = pullback_covariance(bundle.model, grid, cov)
    return _result("pullback-conjugation (linear)", conjugation_residual(grid, cov, pi), 1e-9)


def check_covariance_ode_residual(mutations=()) -> CheckResult:
    """Forward-difference residual of the covariance ODE shrinks at first order."""
    bundle = build_bundle("linear-gaussian")
    sigma0 = np.zeros((2, 2))
    resids = []
    sizes = (50, 100, 200)
    for n in sizes:
        grid = derivative_flow(bundle.vf, integrate_flow(bundle.vf, bundle.default_x0, 1.0, n))
        cov = covariance_path(bundle.model, grid, sigma0)
        dt = 1.0 / n
        worst = 0.0
        for i in range(n):
            a_i = cometric_at(bundle.model, grid.points[i])
            jac = bundle.vf.d_xi(grid.points[i])
            rhs = a_i + jac @ cov.xi_big[i] + cov.xi_big[i] @ jac.T
            lhs = (cov.xi_big[i + 1] - cov.xi_big[i]) / dt
            worst = max(worst, max_abs(lhs - rhs))
        resids.append(worst)
    slope = np.polyfit(np.log([1.0 / n for n in sizes]), np.log(resids), 1)[0]
    return _result("covariance-ode-order (linear)", slope, 0.8, comparison=">=")


def check_variation_covariance(mutations=()) -> CheckResult:
    """Monte Carlo variation covariance reproduces the transported covariance."""
    bundle = build_bundle("scalar-ou")
    grid = derivative_flow(bundle.vf, integrate_flow(bundle.vf, bundle.default_x0, 1.0, 200))
    sigma0 = np.array([[0.04]])
    cov = covariance_path(bundle.model, grid, sigma0)
    sim = variation_samples(bundle.model, grid, sigma0, reps=4000, policy=RngPolicy(2024), vf=bundle.vf)
    rel = np.linalg.norm(sim.covariance - cov.xi_big[-1]) / np.linalg.norm(cov.xi_big[-1])
    return _result("variation-covariance (scalar-ou)", rel, 0.05)


def check_generic_vs_specialized(mutations=()) -> CheckResult:
    """Generic pipeline and tracking recursion agree on the location parameter."""
    bundle = build_bundle("ts2-tracking", {"gamma": 52.0})
    p = TrackingParams(lambda_damping=0.5, gamma_noise=52.0, speed=200.0)
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(3):
        x0 = random_initial_state(rng)
        grid = derivative_flow(bundle.vf, integrate_flow(bundle.vf, x0.as_vector(), 1.0, 25))
        cov = covariance_path(bundle.model, grid, np.zeros((6, 6)))
        generic = ilp_tangent(bundle.model, bundle.mapspec, grid, cov, vf=bundle.vf)
        special = ilp_tracking(x0, p, 1.0, 25)
        scale = max(1.0, max_abs(special.tangent))
        worst = max(worst, max_abs(generic.tangent - special.tangent) / scale)
    return _result("generic-vs-specialized-ilp", worst, 1e-8)


_CHECKS = (
    check_tau_semigroup,
    check_connector_annihilates_alpha,
    check_pullback_conjugation,
    check_covariance_ode_residual,
    check_variation_covariance,
    check_generic_vs_specialized,
)


def run_all_checks(mutations=()) -> list[CheckResult]:
    """Run the named invariant checks; mutations corrupt targeted internals."""
    unknown = set(mutations) - set(MUTATIONS)
    if unknown:
        raise ValueError("unknown mutation hooks: %s" % ", ".join(sorted(unknown)))
    return [check(mutations) for check in _CHECKS]
