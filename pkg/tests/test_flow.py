"""Flow module: intrinsic vector field, RK4 flow, derivative flow."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

import oracles
from conftest import polar_model
from ilpkit import (
    ModelSpec,
    NonFiniteState,
    TrackingParams,
    VectorFieldSpec,
    alpha,
    connector,
    derivative_flow,
    fd_vectorfield,
    integrate_flow,
    random_initial_state,
    tracking_model,
    xi_from_model,
)
from ilpkit.tracking import TS2State, d2xi_apply_tracking


def linear_vf(a):
    a = np.asarray(a, dtype=float)
    return VectorFieldSpec(
        xi=lambda x: a @ x,
        d_xi=lambda x: a.copy(),
        d2_xi_apply=lambda x, t: np.zeros(a.shape[0]),
        provenance="analytic",
    )


class TestXiFromModel:
    def test_flat_geometry_gives_drift(self, rng):
        sigma = oracles.random_spd(rng, 3)
        drift = lambda x: np.array([1.0, -2.0, 0.5]) + 0.1 * x
        model = ModelSpec(
            dim_p=3,
            drift_b=drift,
            diffusion_sigma=lambda x: sigma.copy(),
            metric_g=lambda x: np.linalg.inv(sigma @ sigma.T),
        )
        vf = xi_from_model(model)
        for x in (np.zeros(3), np.array([0.3, -0.7, 1.1])):
            assert_allclose(vf.xi(x), drift(x), atol=1e-10)

    def test_tracking_drift_is_intrinsic_field(self):
        model, vf_analytic, _ = tracking_model(TrackingParams(gamma_noise=52.0))
        vf = xi_from_model(model)
        rng = np.random.default_rng(4)
        for _ in range(5):
            x = random_initial_state(rng).as_vector()
            assert_allclose(vf.xi(x), vf_analytic.xi(x), atol=1e-10 * 52.0**2)

    def test_one_dimensional_correction(self):
        # sigma = x, g = 1/x^2 on x > 0: the classical symbols give
        # Gamma = -1/x, so xi = b + alpha Gamma / 2 = -x/2
        model = ModelSpec(
            dim_p=1,
            drift_b=lambda x: np.zeros(1),
            diffusion_sigma=lambda x: np.array([[float(x[0])]]),
            metric_g=lambda x: np.array([[1.0 / float(x[0]) ** 2]]),
        )
        vf = xi_from_model(model)
        for xv in (0.5, 1.0, 2.0):
            assert vf.xi(np.array([xv]))[0] == pytest.approx(-xv / 2.0, rel=1e-7)


class TestFdVectorField:
    def test_linear_field_second_derivative_vanishes(self):
        a = np.array([[0.3, -1.2], [0.8, 0.1]])
        vf = fd_vectorfield(lambda x: a @ x)
        x = np.array([1.5, -0.7])
        assert_allclose(vf.d_xi(x), a, atol=1e-9)
        t = np.array([[1.0, 0.4], [0.4, 2.0]])
        assert_allclose(vf.d2_xi_apply(x, t), 0.0, atol=1e-6)

    def test_simple_quadratic(self):
        vf = fd_vectorfield(lambda x: np.array([x[0] ** 2, 0.0]))
        t = np.array([[1.0, 0.2], [0.2, 3.0]])
        got = vf.d2_xi_apply(np.array([0.4, -0.2]), t)
        assert_allclose(got, np.array([2.0 * t[0, 0], 0.0]), atol=1e-7)

    def test_tracking_hessian_matches_closed_form(self):
        # contraction against tangent-supported tensors (the only ones the
        # pipeline produces) agrees with the closed-form expression
        p = TrackingParams(gamma_noise=52.0)
        model, vf_analytic, _ = tracking_model(p)
        vf_fd = fd_vectorfield(vf_analytic.xi, fd_step=1e-5)
        rng = np.random.default_rng(9)
        state = random_initial_state(rng)
        x = state.as_vector()
        chi = alpha(model, x)  # supported on acceleration directions
        got = vf_fd.d2_xi_apply(x, chi)
        expected = d2xi_apply_tracking(state, chi)
        assert_allclose(got, expected, atol=1e-4 * max(1.0, np.abs(expected).max()))


class TestIntegrateFlow:
    def test_zero_field_constant(self):
        vf = VectorFieldSpec(
            xi=lambda x: np.zeros(2),
            d_xi=lambda x: np.zeros((2, 2)),
            d2_xi_apply=lambda x, t: np.zeros(2),
        )
        grid = integrate_flow(vf, np.array([1.0, -2.0]), 1.0, 10)
        assert_allclose(grid.points, np.tile([1.0, -2.0], (11, 1)), atol=0)

    def test_linear_flow_matches_matrix_exponential(self):
        a = np.array([[-0.3, -0.9], [0.9, -0.3]])
        x0 = np.array([1.0, 0.4])
        grid = integrate_flow(linear_vf(a), x0, 1.0, 1000)
        assert_allclose(grid.points[-1], oracles.taylor_expm(a) @ x0, atol=1e-8)

    def test_order_four_convergence(self):
        a = np.array([[-0.3, -0.9], [0.9, -0.3]])
        x0 = np.array([1.0, 0.4])
        exact = oracles.taylor_expm(a) @ x0
        errs = [
            np.linalg.norm(integrate_flow(linear_vf(a), x0, 1.0, n).points[-1] - exact)
            for n in (8, 16, 32)
        ]
        assert errs[0] / errs[1] == pytest.approx(16.0, rel=0.4)
        assert errs[1] / errs[2] == pytest.approx(16.0, rel=0.4)

    def test_tracking_flow_preserves_constraints(self):
        p = TrackingParams(gamma_noise=52.0)
        _, vf, _ = tracking_model(p)
        rng = np.random.default_rng(12)
        state = random_initial_state(rng)
        grid = integrate_flow(vf, state.as_vector(), 1.0, 1000)
        speeds = np.linalg.norm(grid.points[:, :3], axis=1)
        assert np.abs(speeds - 200.0).max() <= 1e-6 * 200.0
        dots = np.einsum("ij,ij->i", grid.points[:, :3], grid.points[:, 3:])
        norms = speeds * np.linalg.norm(grid.points[:, 3:], axis=1)
        assert np.abs(dots / norms).max() <= 1e-6

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_non_finite_raises(self):
        vf = VectorFieldSpec(
            xi=lambda x: x**3,
            d_xi=lambda x: np.diag(3 * x**2),
            d2_xi_apply=lambda x, t: 6 * x * np.diag(t),
        )
        with pytest.raises(NonFiniteState):
            integrate_flow(vf, np.array([10.0]), 100.0, 40)


class TestDerivativeFlow:
    def test_constant_field_identity(self):
        vf = VectorFieldSpec(
            xi=lambda x: np.array([1.0, 2.0]),
            d_xi=lambda x: np.zeros((2, 2)),
            d2_xi_apply=lambda x, t: np.zeros(2),
        )
        grid = derivative_flow(vf, integrate_flow(vf, np.zeros(2), 1.0, 8))
        assert_allclose(grid.tau_step, np.tile(np.eye(2), (8, 1, 1)), atol=0)
        assert_allclose(grid.tau_to_end, np.tile(np.eye(2), (9, 1, 1)), atol=0)

    def test_linear_commuting_case_exact(self):
        a = np.array([[-0.4, 1.0], [-1.0, -0.4]])
        grid = derivative_flow(linear_vf(a), integrate_flow(linear_vf(a), np.ones(2), 1.0, 16))
        for i in (0, 5, 11):
            t_remaining = grid.times[-1] - grid.times[i]
            assert_allclose(
                grid.tau_to_end[i], oracles.taylor_expm(a * t_remaining), rtol=1e-10, atol=1e-12
            )

    def test_noncommuting_matches_ode_reference(self):
        vf = fd_vectorfield(lambda x: np.array([np.sin(x[1]), 0.5 * x[0] ** 2]))
        x0 = np.array([0.8, 0.3])
        errs = []
        for n in (64, 128):
            grid = derivative_flow(vf, integrate_flow(vf, x0, 1.0, n))
            ref = oracles.tau_ode_reference(vf.d_xi, grid.points, grid.times)
            errs.append(np.abs(grid.tau_from_start()[-1] - ref[-1]).max())
        assert errs[0] <= 5e-4
        # second-order step scheme: error drops about 4x per halving
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.6)

    def test_semigroup_property(self):
        a = np.array([[-0.2, -0.5], [0.5, -0.2]])
        grid = derivative_flow(linear_vf(a), integrate_flow(linear_vf(a), np.ones(2), 1.0, 64))

        def tau(i, j):
            out = np.eye(2)
            for k in range(i, j):
                out = grid.tau_step[k] @ out
            return out

        rng = np.random.default_rng(0)
        for _ in range(10):
            i, j, k = sorted(rng.integers(0, 65, size=3))
            resid = np.abs(tau(i, k) - tau(j, k) @ tau(i, j)).max()
            assert resid <= 1e-8

    def test_backward_ode_consistency(self):
        # finite differences of tau_t^delta satisfy d tau / dt = -tau Dxi(x_t)
        p = TrackingParams(gamma_noise=52.0)
        _, vf, _ = tracking_model(p)
        rng = np.random.default_rng(3)
        x0 = random_initial_state(rng).as_vector()
        resids = []
        for n in (100, 200):
            grid = derivative_flow(vf, integrate_flow(vf, x0, 1.0, n))
            dt = 1.0 / n
            worst = 0.0
            for i in range(1, n):
                lhs = (grid.tau_to_end[i + 1] - grid.tau_to_end[i - 1]) / (2 * dt)
                rhs = -grid.tau_to_end[i] @ vf.d_xi(grid.points[i])
                worst = max(worst, np.abs(lhs - rhs).max())
            resids.append(worst)
        assert resids[1] <= resids[0] / 3.0  # second-order in the step


class TestFlowGrid:
    def test_tau_from_start_matches_inverse_composition(self):
        a = np.array([[0.1, -0.6], [0.6, 0.1]])
        grid = derivative_flow(linear_vf(a), integrate_flow(linear_vf(a), np.ones(2), 0.5, 10))
        tau0 = grid.tau_from_start()
        # tau_0^delta = tau_t^delta tau_0^t for every t
        for i in range(11):
            assert_allclose(grid.tau_to_end[i] @ tau0[i], tau0[-1], rtol=1e-12, atol=1e-13)
