"""Out-of-sample evaluation: splits, predictors, baseline, and the FE metric.

Predictions are reduced-form conditional means given contemporaneous
factors: y_hat_t = (I - D(rho)W)^{-1} B f_t.  In the latent workflow the
factors entering a test-period prediction are recovered from that same test
observation through the training loadings, so the number reported is a
common-component fit rather than an ex-ante forecast; it matches the
contemporaneous-factor FE used throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FactorSet, PanelData, SpatialWeights, validate_system
from .exceptions import NumericError, ValidationError
from .latent import LatentFactorFit, estimate_latent, recover_factors
from .validation import as_factors, as_panel, as_weights
from .yule_walker import DEFAULT_LAMBDA_GRID, SaptEstimate, estimate_observed


@dataclass(frozen=True)
class ForecastReport:
    """FE plus the per-period squared errors it aggregates."""

    fe: float
    per_time_sq_errors: np.ndarray
    model: str
    split_index: int

    def __post_init__(self):
        arr = np.asarray(self.per_time_sq_errors, float).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "per_time_sq_errors", arr)


def split(data, fraction: float = 0.8):
    """Chronological split at T1 = floor(fraction * T); no shuffling.

    Returned segments drop the demeaned flag: a slice of centered data is
    not exactly centered.
    """
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"fraction must lie in (0, 1), got {fraction}")
    t = data.values.shape[0]
    t_split = int(np.floor(fraction * t))
    if t_split < 2 or t - t_split < 1:
        raise ValidationError(f"split at T1={t_split} is degenerate for T={t}")
    if isinstance(data, PanelData):
        return (PanelData(data.values[:t_split], data.unit_ids),
                PanelData(data.values[t_split:], data.unit_ids))
    if isinstance(data, FactorSet):
        return (FactorSet(data.values[:t_split], data.factor_ids),
                FactorSet(data.values[t_split:], data.factor_ids))
    raise TypeError(f"split expects PanelData or FactorSet, got {type(data).__name__}")


def _reduced_form(estimate: SaptEstimate, weights: SpatialWeights,
                  factor_values: np.ndarray) -> np.ndarray:
    diag = validate_system(estimate.params, weights)
    if not diag.ok:
        raise NumericError(
            f"estimated system is singular (min sv {diag.min_singular_value:.3e}); "
            "re-estimate with a larger ridge penalty"
        )
    s = np.eye(weights.n_units) - estimate.params.rho[:, None] * weights.values
    return np.linalg.solve(s, estimate.params.loadings @ factor_values.T).T


def predict_observed(estimate: SaptEstimate, weights: SpatialWeights,
                     test_factors) -> np.ndarray:
    """Reduced-form predictions for each test row of observed factors."""
    f = test_factors.values if isinstance(test_factors, FactorSet) \
        else np.atleast_2d(np.asarray(test_factors, float))
    if f.shape[1] != estimate.params.n_factors:
        raise ValidationError(
            f"estimate has K={estimate.params.n_factors} factors, test data has {f.shape[1]}"
        )
    return _reduced_form(estimate, weights, f)


def predict_latent(estimate: SaptEstimate, fit: LatentFactorFit,
                   weights: SpatialWeights, test_panel) -> np.ndarray:
    """Common-component predictions: recover factors from the test rows, then
    apply the reduced form."""
    y = test_panel.values if isinstance(test_panel, PanelData) \
        else np.atleast_2d(np.asarray(test_panel, float))
    if y.shape[1] != fit.loadings.shape[0]:
        raise ValidationError(
            f"loadings cover {fit.loadings.shape[0]} units, test data has {y.shape[1]}"
        )
    f_test = y @ fit.loadings / y.shape[1]
    return _reduced_form(estimate, weights, f_test)


def predict_factor_only(train_panel: PanelData, train_factors: FactorSet,
                        test_factors) -> np.ndarray:
    """No-spatial baseline: per-unit least squares of y on f, no intercept."""
    f_train = train_factors.values
    if np.linalg.matrix_rank(f_train) < f_train.shape[1]:
        raise NumericError("training factor matrix is rank deficient")
    b0, *_ = np.linalg.lstsq(f_train, train_panel.values, rcond=None)
    f_test = test_factors.values if isinstance(test_factors, FactorSet) \
        else np.atleast_2d(np.asarray(test_factors, float))
    return f_test @ b0


def fe(predicted, actual) -> float:
    """Forecast error: sqrt of the mean squared entry-wise prediction error."""
    predicted = np.asarray(predicted, float)
    actual = np.asarray(actual, float)
    if predicted.shape != actual.shape:
        raise ValidationError(
            f"prediction shape {predicted.shape} does not match actual {actual.shape}"
        )
    return float(np.sqrt(np.mean((predicted - actual) ** 2)))


def _report(predicted, actual, model, split_index) -> ForecastReport:
    sq = ((predicted - actual) ** 2).sum(axis=1)
    return ForecastReport(fe=fe(predicted, actual), per_time_sq_errors=sq,
                          model=model, split_index=split_index)


ALL_MODELS = ("sapt-observed", "sapt-latent", "factor-only")


def forecast_evaluate(
    panel,
    factors=None,
    weights=None,
    models=ALL_MODELS,
    fraction: float = 0.8,
    lam="auto",
    k=1,
    kbar: int = 5,
    k0: int = 2,
    n_factors="ratio",
    lambda_grid=None,
    max_factors: int = 8,
):
    """Train/test workflow: split, estimate on the training window, predict, FE.

    Training data are demeaned with training-sample means, and the same means
    center the test window, so all models are scored on the same target.
    """
    panel = as_panel(panel)
    weights = as_weights(weights)
    models = tuple(models)
    unknown = set(models) - set(ALL_MODELS)
    if unknown:
        raise ValidationError(f"unknown models {sorted(unknown)}; choose from {ALL_MODELS}")
    need_factors = {"sapt-observed", "factor-only"} & set(models)
    if need_factors and factors is None:
        raise ValidationError(f"models {sorted(need_factors)} require observed factors")

    train_p, test_p = split(panel, fraction)
    t_split = train_p.values.shape[0]
    y_mean = train_p.values.mean(axis=0)
    train_panel = PanelData(train_p.values - y_mean, panel.unit_ids, demeaned=True)
    test_y = test_p.values - y_mean

    train_factors = test_f = None
    if factors is not None:
        factors = as_factors(factors)
        train_f, test_fs = split(factors, fraction)
        f_mean = train_f.values.mean(axis=0)
        train_factors = FactorSet(train_f.values - f_mean, factors.factor_ids, demeaned=True)
        test_f = test_fs.values - f_mean

    grid = lambda_grid if lambda_grid is not None else DEFAULT_LAMBDA_GRID
    reports = []
    for model in models:
        if model == "sapt-observed":
            est = estimate_observed(train_panel, train_factors, weights,
                                    lam=lam, k=k, kbar=kbar, lambda_grid=grid)
            predicted = predict_observed(est, weights, test_f)
        elif model == "sapt-latent":
            est, fit = estimate_latent(train_panel, weights, k0=k0,
                                       n_factors=n_factors, lam=lam, k=k, kbar=kbar,
                                       lambda_grid=grid, max_factors=max_factors)
            predicted = predict_latent(est, fit, weights, test_y)
        else:
            predicted = predict_factor_only(train_panel, train_factors, test_f)
        reports.append(_report(predicted, test_y, model, t_split))
    return reports
