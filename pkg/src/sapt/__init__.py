"""Heterogeneous spatial-interaction factor models.

Estimation (observed or latent factors), asymptotic inference, mean-variance
portfolio tools, weight-matrix builders, Monte Carlo simulation, and
out-of-sample forecasting for panels following

    y_t = D(rho) W y_t + B f_t + eps_t.
"""

__version__ = "0.1.0"

from .data import (
    FactorSet,
    PanelData,
    SaptParams,
    SpatialWeights,
    SystemDiagnostics,
    demean,
    system_matrix,
    validate_system,
)
from .exceptions import DemeanWarning, NumericError, ValidationError
from .forecast import (
    ForecastReport,
    fe,
    forecast_evaluate,
    predict_factor_only,
    predict_latent,
    predict_observed,
    split,
)
from .inference import (
    LongRunFEps,
    UnitInference,
    default_bandwidth,
    factor_asy_cov,
    latent_unit_asymptotics,
    longrun_fe,
    rotation_KNT,
    standardized_stat,
    unit_asymptotics,
    wald_intervals,
)
from .latent import (
    LatentFactorFit,
    LatentSpatialYuleWalker,
    build_M,
    estimate_latent,
    extract_loadings,
    recover_factors,
    select_K_ic,
    select_K_ratio,
)
from .markets import (
    MarketInputs,
    leave_one_out_tangency,
    pricing_decomposition,
    pricing_identity_gap,
    spatial_rho,
    tangency_weights,
)
from .moments import LagCovariances, auto_cov_f, auto_cov_y, cross_cov, lag_covariances
from .simulate import (
    MonteCarloReport,
    SimConfig,
    gen_factors,
    gen_panel,
    gen_params,
    gen_params_identified,
    metric_ce,
    metric_rmse,
    normalize_structural_loadings,
    population_lag_covariances,
    rep_rng,
    run_monte_carlo,
)
from .weights import (
    GeoLocations,
    haversine_matrix,
    weights_banded,
    weights_from_correlation,
    weights_from_distance,
    weights_radius,
)
from .yule_walker import (
    RidgeSolution,
    RidgeSystem,
    SaptEstimate,
    SpatialYuleWalker,
    build_system,
    estimate_observed,
    ridge_solve,
    select_lag_kstar,
    select_lambda,
)
