import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ilpkit import ModelSpec  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)


def polar_model(noise: float = 1.0, analytic_derivative: bool = False) -> ModelSpec:
    """Flat plane in polar coordinates; metric diag(1, r^2)/noise^2 inverts alpha."""
    s = noise

    def sigma(x):
        return np.array([[s, 0.0], [0.0, s / float(x[0])]])

    def metric(x):
        r = float(x[0])
        return np.array([[1.0, 0.0], [0.0, r * r]]) / (s * s)

    def metric_derivative(x):
        d = np.zeros((2, 2, 2))
        d[0, 1, 1] = 2.0 * float(x[0]) / (s * s)
        return d

    return ModelSpec(
        dim_p=2,
        drift_b=lambda x: np.zeros(2),
        diffusion_sigma=sigma,
        metric_g=metric,
        analytic_metric_derivative=metric_derivative if analytic_derivative else None,
    )
