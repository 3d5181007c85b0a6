"""Intrinsic location parameters of diffusion processes.

The mean of a nonlinear image of a diffusion is not coordinate-invariant;
the intrinsic location parameter is, and to first order it is computable
from two ODE solves and a quadrature.  This package provides the geometry
induced by a diffusion model (possibly degenerate cometric, generalized
inverse metric, torsion-free connection), the derivative-flow and covariance
transport recursions, the location-parameter formula with geodesic
projection, a Monte Carlo engine to validate it, a worked constant-speed
target-tracking model, and a batch CLI.
"""

from .errors import (
    ChartEscape,
    ConfigError,
    DimensionMismatch,
    IlpkitError,
    NonFiniteState,
    RankDeficiencyAmbiguous,
    SingularMetric,
    ZeroVelocity,
)
from .flow import FlowGrid, VectorFieldSpec, derivative_flow, fd_vectorfield, integrate_flow, xi_from_model
from .geometry import (
    Connector,
    MapSpec,
    ModelSpec,
    Splitting,
    alpha,
    check_generalized_inverse,
    connector,
    connector_apply,
    energy_density,
    exp_map,
    exp_map_connector,
    second_fundamental_form,
    sub_riemannian_splitting,
)
from .ilp import (
    CovariancePath,
    ILPResult,
    covariance_path,
    ilp_identity_case,
    ilp_project,
    ilp_series,
    ilp_tangent,
    pullback_covariance,
)
from .mc import (
    MCSummary,
    RngPolicy,
    SlopeEstimate,
    VariationResult,
    epsilon_squared_slope,
    euler_maruyama,
    intrinsic_family_path,
    mc_mean,
    variation_samples,
)
from .models import MODEL_SCHEMAS, ModelBundle, build_bundle, model_names
from .tracking import (
    TS2State,
    TrackingParams,
    connector_tracking,
    d2xi_apply_tracking,
    dxi_tracking,
    ilp_tracking,
    proj_perp,
    project_constraints,
    random_initial_state,
    rho,
    tracking_model,
    xi_tracking,
)

__version__ = "0.1.0"

__all__ = [
    "ChartEscape",
    "ConfigError",
    "DimensionMismatch",
    "IlpkitError",
    "NonFiniteState",
    "RankDeficiencyAmbiguous",
    "SingularMetric",
    "ZeroVelocity",
    "FlowGrid",
    "VectorFieldSpec",
    "derivative_flow",
    "fd_vectorfield",
    "integrate_flow",
    "xi_from_model",
    "Connector",
    "MapSpec",
    "ModelSpec",
    "Splitting",
    "alpha",
    "check_generalized_inverse",
    "connector",
    "connector_apply",
    "energy_density",
    "exp_map",
    "exp_map_connector",
    "second_fundamental_form",
    "sub_riemannian_splitting",
    "CovariancePath",
    "ILPResult",
    "covariance_path",
    "ilp_identity_case",
    "ilp_project",
    "ilp_series",
    "ilp_tangent",
    "pullback_covariance",
    "MCSummary",
    "RngPolicy",
    "SlopeEstimate",
    "VariationResult",
    "epsilon_squared_slope",
    "euler_maruyama",
    "intrinsic_family_path",
    "mc_mean",
    "variation_samples",
    "MODEL_SCHEMAS",
    "ModelBundle",
    "build_bundle",
    "model_names",
    "TS2State",
    "TrackingParams",
    "connector_tracking",
    "d2xi_apply_tracking",
    "dxi_tracking",
    "ilp_tracking",
    "proj_perp",
    "project_constraints",
    "random_initial_state",
    "rho",
    "tracking_model",
    "xi_tracking",
    "__version__",
]
