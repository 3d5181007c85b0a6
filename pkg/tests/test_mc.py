"""Monte Carlo engine: simulation, summaries, substreams, variation process."""

import os

import numpy as np
import pytest
from numpy.testing import assert_allclose

import oracles
from ilpkit import (
    ModelSpec,
    NonFiniteState,
    RngPolicy,
    TrackingParams,
    build_bundle,
    covariance_path,
    derivative_flow,
    euler_maruyama,
    integrate_flow,
    intrinsic_family_path,
    mc_mean,
    random_initial_state,
    tracking_model,
    variation_samples,
)
from ilpkit.errors import DimensionMismatch


class TestRngPolicy:
    def test_streams_reproducible_and_distinct(self):
        policy = RngPolicy(123)
        a1 = policy.stream_for(5).normal(size=8)
        a2 = policy.stream_for(5).normal(size=8)
        b = policy.stream_for(6).normal(size=8)
        assert np.array_equal(a1, a2)
        assert not np.array_equal(a1, b)

    def test_named_streams_do_not_collide_with_trajectories(self):
        policy = RngPolicy(123)
        t = policy.stream_for(0).normal(size=4)
        n = policy.named_stream(0).normal(size=4)
        assert not np.array_equal(t, n)


class TestEulerMaruyama:
    def test_deterministic_when_noiseless(self):
        model = ModelSpec(
            dim_p=1,
            drift_b=lambda x: -x,
            diffusion_sigma=lambda x: np.zeros((1, 1)),
            metric_g=lambda x: np.eye(1),
        )
        path = euler_maruyama(model, np.array([1.0]), 1.0, 100, RngPolicy(0).stream_for(0))
        expected = (1.0 - 1.0 / 100) ** np.arange(101)
        assert_allclose(path[:, 0], expected, rtol=1e-12)

    def test_ou_mean_within_stderr(self):
        b = build_bundle("scalar-ou")
        summary = mc_mean(b.model, b.default_x0, 1.0, 50, 10000, RngPolicy(42))
        expected = oracles.ou_mean(1.0, 1.0, summary.times)
        # final-time mean within three standard errors
        assert abs(summary.mean[-1, 0] - expected[-1]) <= 3 * summary.stderr[-1, 0]

    def test_tracking_projector_maintains_constraints(self):
        p = TrackingParams(gamma_noise=52.0)
        model, _, projector = tracking_model(p)
        rng = np.random.default_rng(7)
        x0 = random_initial_state(rng).as_vector()
        path = euler_maruyama(model, x0, 1.0, 25, RngPolicy(1).stream_for(0), projector)
        v, a = path[:, :3], path[:, 3:]
        speeds = np.linalg.norm(v, axis=1)
        assert np.abs(speeds - 200.0).max() <= 1e-9 * 200.0
        dots = np.abs(np.einsum("ij,ij->i", v, a))
        scale = speeds * np.maximum(np.linalg.norm(a, axis=1), 1e-30)
        assert (dots / scale).max() <= 1e-9

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_explosion_raises_non_finite(self):
        model = ModelSpec(
            dim_p=1,
            drift_b=lambda x: x**3,
            diffusion_sigma=lambda x: np.eye(1),
            metric_g=lambda x: np.eye(1),
        )
        with pytest.raises(NonFiniteState):
            euler_maruyama(model, np.array([50.0]), 10.0, 30, RngPolicy(0).stream_for(0))


class TestMcMean:
    def test_noiseless_zero_stderr(self):
        model = ModelSpec(
            dim_p=1,
            drift_b=lambda x: -x,
            diffusion_sigma=lambda x: np.zeros((1, 1)),
            metric_g=lambda x: np.eye(1),
        )
        summary = mc_mean(model, np.array([2.0]), 1.0, 10, 8, RngPolicy(3))
        assert_allclose(summary.stderr, 0.0, atol=1e-14)

    def test_reps_floor(self):
        b = build_bundle("scalar-ou")
        with pytest.raises(DimensionMismatch):
            mc_mean(b.model, b.default_x0, 1.0, 4, 1, RngPolicy(0))

    def test_thread_count_invariance(self):
        b = build_bundle("scalar-ou")
        old = os.environ.get("ILP_THREADS")
        try:
            os.environ["ILP_THREADS"] = "1"
            s1 = mc_mean(b.model, b.default_x0, 1.0, 20, 500, RngPolicy(11))
            os.environ["ILP_THREADS"] = "3"
            s3 = mc_mean(b.model, b.default_x0, 1.0, 20, 500, RngPolicy(11))
        finally:
            if old is None:
                os.environ.pop("ILP_THREADS", None)
            else:
                os.environ["ILP_THREADS"] = old
        assert np.array_equal(s1.mean, s3.mean)
        assert np.array_equal(s1.stderr, s3.stderr)

    def test_initial_sampler_used_per_trajectory(self):
        b = build_bundle("ts2-tracking", {"gamma": 52.0})
        summary = mc_mean(
            b.model,
            None,
            0.2,
            5,
            16,
            RngPolicy(5),
            constraint_projector=b.projector,
            initial_sampler=b.x0_sampler,
        )
        # distinct random initial states: time-zero spread is nonzero
        assert summary.stderr[0].max() > 1.0

    def test_weak_order_one_on_ou(self):
        # |Euler mean - exact mean| at delta shrinks linearly in the step
        b = build_bundle("scalar-ou", {"kappa": 1.4, "noise": 0.0})
        errs = []
        for n in (4, 8, 16):
            s = mc_mean(b.model, b.default_x0, 1.0, n, 2, RngPolicy(1))
            errs.append(abs(s.mean[-1, 0] - oracles.ou_mean(1.0, 1.4, 1.0)))
        slope = np.polyfit(np.log([1 / 4, 1 / 8, 1 / 16]), np.log(errs), 1)[0]
        assert slope == pytest.approx(1.0, abs=0.3)


class TestIntrinsicFamily:
    def test_epsilon_zero_reproduces_euler_flow(self):
        b = build_bundle("scalar-ou")
        path = intrinsic_family_path(
            b.model, b.vf, b.default_x0, 1.0, 50, 0.0, RngPolicy(0).stream_for(0)
        )
        x = 1.0
        for i in range(50):
            x = x + (-x) * (1.0 / 50)
        assert path[-1, 0] == pytest.approx(x, rel=1e-12)

    def test_tracking_zeta_vanishes(self):
        # the drift correction is zero, so the family is just drift plus noise
        p = TrackingParams(gamma_noise=52.0)
        model, vf, projector = tracking_model(p)
        rng = np.random.default_rng(6)
        x0 = random_initial_state(rng).as_vector()
        inc = RngPolicy(9).stream_for(0).normal(0, np.sqrt(1 / 25), size=(25, 6))
        fam = intrinsic_family_path(
            model, vf, x0, 1.0, 25, 1.0, None, constraint_projector=projector, increments=inc
        )
        plain = euler_maruyama(model, x0, 1.0, 25, _FixedIncrements(inc), projector)
        assert_allclose(fam, plain, rtol=1e-10, atol=1e-8)

    def test_scalar_curved_model_has_drift_correction(self):
        # sigma = x so zeta = Gamma alpha / 2 is nonzero; at epsilon = 1 the
        # drift must differ from the epsilon = 0 flow by exactly zeta
        model = ModelSpec(
            dim_p=1,
            drift_b=lambda x: np.zeros(1),
            diffusion_sigma=lambda x: np.array([[float(x[0])]]),
            metric_g=lambda x: np.array([[1.0 / float(x[0]) ** 2]]),
        )
        from ilpkit.mc import default_zeta

        zeta = default_zeta(model)
        # hand value: Gamma = -1/x, alpha = x^2 -> zeta = -x/2
        assert zeta(np.array([2.0]))[0] == pytest.approx(-1.0, rel=1e-7)


class _FixedIncrements:
    """Stands in for a generator: returns the prescribed increments once."""

    def __init__(self, increments):
        self._increments = increments

    def normal(self, loc, scale, size):
        assert size == self._increments.shape
        return self._increments.copy()


class TestVariationSamples:
    def test_zero_noise_zero_covariance(self):
        b = build_bundle("scalar-ou", {"noise": 0.0})
        grid = derivative_flow(b.vf, integrate_flow(b.vf, b.default_x0, 1.0, 20))
        sim = variation_samples(b.model, grid, np.zeros((1, 1)), 100, RngPolicy(0), vf=b.vf)
        assert_allclose(sim.samples, 0.0, atol=0)

    def test_brownian_case_matches_t_alpha(self):
        model = ModelSpec(
            dim_p=2,
            drift_b=lambda x: np.zeros(2),
            diffusion_sigma=lambda x: np.diag([0.7, 1.3]),
            metric_g=lambda x: np.diag([0.7, 1.3]) ** -2,
        )
        from ilpkit import VectorFieldSpec

        vf = VectorFieldSpec(
            xi=lambda x: np.zeros(2),
            d_xi=lambda x: np.zeros((2, 2)),
            d2_xi_apply=lambda x, t: np.zeros(2),
        )
        grid = derivative_flow(vf, integrate_flow(vf, np.zeros(2), 1.0, 50))
        sim = variation_samples(model, grid, np.zeros((2, 2)), 10000, RngPolicy(77), vf=vf)
        expected = np.diag([0.49, 1.69])
        rel = np.linalg.norm(sim.covariance - expected) / np.linalg.norm(expected)
        assert rel <= 0.05

    def test_scalar_ou_matches_transported_covariance(self):
        b = build_bundle("scalar-ou")
        grid = derivative_flow(b.vf, integrate_flow(b.vf, b.default_x0, 1.0, 200))
        sigma0 = np.array([[0.04]])
        cov = covariance_path(b.model, grid, sigma0)
        sim = variation_samples(b.model, grid, sigma0, 10000, RngPolicy(13), vf=b.vf)
        rel = abs(sim.covariance[0, 0] - cov.xi_big[-1, 0, 0]) / cov.xi_big[-1, 0, 0]
        assert rel <= 0.05

    def test_tracking_matches_transported_covariance(self):
        b = build_bundle("ts2-tracking")  # verbatim gamma; both sides scale with it
        rng = RngPolicy(20240901).named_stream(0)
        x0 = random_initial_state(rng).as_vector()
        grid = derivative_flow(b.vf, integrate_flow(b.vf, x0, 1.0, 200))
        cov = covariance_path(b.model, grid, np.zeros((6, 6)))
        sim = variation_samples(b.model, grid, np.zeros((6, 6)), 10000, RngPolicy(14), vf=b.vf)
        rel = np.linalg.norm(sim.covariance - cov.xi_big[-1]) / np.linalg.norm(cov.xi_big[-1])
        assert rel <= 0.05

    @pytest.mark.slow
    def test_two_percent_at_hundred_thousand_reps(self):
        b = build_bundle("scalar-ou")
        grid = derivative_flow(b.vf, integrate_flow(b.vf, b.default_x0, 1.0, 400))
        sigma0 = np.array([[0.04]])
        cov = covariance_path(b.model, grid, sigma0)
        sim = variation_samples(b.model, grid, sigma0, 100000, RngPolicy(15), vf=b.vf)
        rel = abs(sim.covariance[0, 0] - cov.xi_big[-1, 0, 0]) / cov.xi_big[-1, 0, 0]
        assert rel <= 0.02

        t = build_bundle("ts2-tracking")
        x0 = random_initial_state(RngPolicy(16).named_stream(0)).as_vector()
        grid = derivative_flow(t.vf, integrate_flow(t.vf, x0, 1.0, 400))
        cov = covariance_path(t.model, grid, np.zeros((6, 6)))
        sim = variation_samples(t.model, grid, np.zeros((6, 6)), 100000, RngPolicy(17), vf=t.vf)
        rel = np.linalg.norm(sim.covariance - cov.xi_big[-1]) / np.linalg.norm(cov.xi_big[-1])
        assert rel <= 0.02


class TestProjectorIdempotence:
    def test_tracking_projector(self):
        p = TrackingParams(gamma_noise=52.0)
        _, _, projector = tracking_model(p)
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.normal(size=6) * np.array([100, 100, 100, 30, 30, 30])
            once = projector(x)
            twice = projector(once)
            assert_allclose(twice, once, atol=1e-12 * max(1.0, np.abs(once).max()))
