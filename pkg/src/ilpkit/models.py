"""Built-in model registry for the experiment front end.

Each bundle wires a diffusion model, its vector field with the best available
derivatives, the target map used for location parameters, an optional
constraint projector and initial-state sampler, and (where known) the exact
mean for report cross-checks.  Models are code, not configuration: new ones
are registered here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError
from .flow import VectorFieldSpec, xi_from_model
from .geometry import Connector, MapSpec, ModelSpec
from .tracking import TrackingParams, random_initial_state, tracking_model

__all__ = ["ModelBundle", "MODEL_SCHEMAS", "build_bundle", "model_names"]


@dataclass(frozen=True)
class ModelBundle:
    name: str
    params: dict
    model: ModelSpec
    vf: VectorFieldSpec
    mapspec: MapSpec
    projector: Callable[[np.ndarray], np.ndarray] | None
    default_x0: np.ndarray | None
    x0_sampler: Callable[[np.random.Generator], np.ndarray] | None
    curved_target: bool
    exact_mean: Callable[[float, np.ndarray], np.ndarray] | None


MODEL_SCHEMAS: dict[str, dict[str, float]] = {
    "ts2-tracking": {"lambda": 0.5, "gamma": 5.2e3, "speed": 200.0, "accel": 50.0},
    "scalar-ou": {"kappa": 1.0, "noise": 0.5},
    "linear-gaussian": {
        "a11": -0.2,
        "a12": -0.5,
        "a21": 0.5,
        "a22": -0.2,
        "noise": 0.4,
    },
    "polar-demo": {"pull": 4.0, "omega": 1.0, "noise": 0.15},
}


def model_names() -> list[str]:
    return sorted(MODEL_SCHEMAS)


def _ts2_bundle(params: dict) -> ModelBundle:
    p = TrackingParams(
        lambda_damping=params["lambda"], gamma_noise=params["gamma"], speed=params["speed"]
    )
    model, vf, projector = tracking_model(p)

    def sampler(rng: np.random.Generator) -> np.ndarray:
        return random_initial_state(rng, speed=params["speed"], accel=params["accel"]).as_vector()

    return ModelBundle(
        name="ts2-tracking",
        params=dict(params),
        model=model,
        vf=vf,
        mapspec=MapSpec.identity(6),
        projector=projector,
        default_x0=None,
        x0_sampler=sampler,
        curved_target=False,
        exact_mean=None,
    )


def _scalar_ou_bundle(params: dict) -> ModelBundle:
    kappa = float(params["kappa"])
    s = float(params["noise"])
    ginv = 1.0 / (s * s) if s > 0 else 1.0

    model = ModelSpec(
        dim_p=1,
        drift_b=lambda x: -kappa * np.asarray(x, dtype=float),
        diffusion_sigma=lambda x: np.array([[s]]),
        metric_g=lambda x: np.array([[ginv]]),
        analytic_metric_derivative=lambda x: np.zeros((1, 1, 1)),
        analytic_connector=lambda x: Connector(
            coeffs=np.zeros((1, 1, 1)), point=np.asarray(x, dtype=float)
        ),
    )
    vf = xi_from_model(
        model,
        d_xi=lambda x: np.array([[-kappa]]),
        d2_xi_apply=lambda x, t: np.zeros(1),
    )

    def exact_mean(t: float, x0: np.ndarray) -> np.ndarray:
        return np.asarray(x0, dtype=float) * np.exp(-kappa * t)

    return ModelBundle(
        name="scalar-ou",
        params=dict(params),
        model=model,
        vf=vf,
        mapspec=MapSpec.identity(1),
        projector=None,
        default_x0=np.array([1.0]),
        x0_sampler=None,
        curved_target=False,
        exact_mean=exact_mean,
    )


def _linear_gaussian_bundle(params: dict) -> ModelBundle:
    a = np.array(
        [[params["a11"], params["a12"]], [params["a21"], params["a22"]]], dtype=float
    )
    s = float(params["noise"])
    ginv = 1.0 / (s * s) if s > 0 else 1.0

    model = ModelSpec(
        dim_p=2,
        drift_b=lambda x: a @ np.asarray(x, dtype=float),
        diffusion_sigma=lambda x: s * np.eye(2),
        metric_g=lambda x: ginv * np.eye(2),
        analytic_metric_derivative=lambda x: np.zeros((2, 2, 2)),
        analytic_connector=lambda x: Connector(
            coeffs=np.zeros((2, 2, 2)), point=np.asarray(x, dtype=float)
        ),
    )
    vf = xi_from_model(model, d_xi=lambda x: a.copy(), d2_xi_apply=lambda x, t: np.zeros(2))

    def exact_mean(t: float, x0: np.ndarray) -> np.ndarray:
        return expm(a * t) @ np.asarray(x0, dtype=float)

    return ModelBundle(
        name="linear-gaussian",
        params=dict(params),
        model=model,
        vf=vf,
        mapspec=MapSpec.identity(2),
        projector=None,
        default_x0=np.array([1.0, 0.5]),
        x0_sampler=None,
        curved_target=False,
        exact_mean=exact_mean,
    )


def _polar_demo_bundle(params: dict) -> ModelBundle:
    """Flat plane in polar coordinates ``(r, theta)`` with an inward-pulling drift.

    The metric ``diag(1, r^2)/noise^2`` is the exact inverse of the cometric,
    so the connection is the classical one with ``G^r_tt = -r`` and
    ``G^t_rt = 1/r``; the drift correction makes the intrinsic field differ
    from the raw drift, which exercises every curved-geometry code path.
    """
    pull = float(params["pull"])
    omega = float(params["omega"])
    s = float(params["noise"])
    s2 = s * s

    def sigma(x):
        r = float(x[0])
        return np.array([[s, 0.0], [0.0, s / r]])

    def metric(x):
        r = float(x[0])
        return np.array([[1.0, 0.0], [0.0, r * r]]) / s2

    def metric_derivative(x):
        r = float(x[0])
        d = np.zeros((2, 2, 2))
        d[0, 1, 1] = 2.0 * r / s2
        return d

    def conn(x):
        r = float(x[0])
        coeffs = np.zeros((2, 2, 2))
        coeffs[0, 1, 1] = -r
        coeffs[1, 0, 1] = 1.0 / r
        coeffs[1, 1, 0] = 1.0 / r
        return Connector(coeffs=coeffs, point=np.asarray(x, dtype=float))

    def drift(x):
        r = float(x[0])
        return np.array([-pull * (r - 1.0), omega])

    model = ModelSpec(
        dim_p=2,
        drift_b=drift,
        diffusion_sigma=sigma,
        metric_g=metric,
        analytic_metric_derivative=metric_derivative,
        analytic_connector=conn,
    )
    vf = xi_from_model(model)  # finite-difference derivatives of the corrected field
    return ModelBundle(
        name="polar-demo",
        params=dict(params),
        model=model,
        vf=vf,
        mapspec=MapSpec.identity(2, target_connector=lambda y: conn(y).coeffs),
        projector=None,
        default_x0=np.array([1.0, 0.0]),
        x0_sampler=None,
        curved_target=True,
        exact_mean=None,
    )


_BUILDERS = {
    "ts2-tracking": _ts2_bundle,
    "scalar-ou": _scalar_ou_bundle,
    "linear-gaussian": _linear_gaussian_bundle,
    "polar-demo": _polar_demo_bundle,
}


def build_bundle(name: str, overrides: dict | None = None) -> ModelBundle:
    """Instantiate a built-in model with schema-checked parameter overrides."""
    if name not in MODEL_SCHEMAS:
        raise ConfigError(
            "unknown model %r; built-ins: %s" % (name, ", ".join(model_names())), key="name"
        )
    params = dict(MODEL_SCHEMAS[name])
    for key, value in (overrides or {}).items():
        if key not in params:
            raise ConfigError(
                "unknown parameter %r for model %r" % (key, name), section="model", key=key
            )
        params[key] = float(value)
    return _BUILDERS[name](params)
