"""Shrinkage Yule-Walker estimation with observed factors.

For unit i the moment identity ties the lag-k covariances to the unknown
coefficients beta_i = (rho_i, b_i')':

    cov_yf(k)' e_i = cov_yf(k)' w_i * rho_i + cov_f(k)' b_i

A single lag yields K equations for K+1 unknowns, so two lags (0 and k,
k >= 1 by default) are stacked into a 2K x (K+1) system and solved by ridge
regression:

    beta_i(lambda) = (X_i'X_i + lambda I)^{-1} X_i'Y_i.

At lambda = 0 the Moore-Penrose pseudo-inverse is used instead.  Note that
whenever the moment identity holds exactly (population covariances, or
noiseless data), the stacked design is rank K: its first column equals the
factor block applied to c_i = B'S^{-1}'w_i.  Identification in practice
comes from sampling noise, and only V_i-weighted combinations of beta_i
concentrate; see the inference module.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .data import PanelData, FactorSet, SpatialWeights, SaptParams
from .exceptions import DemeanWarning, NumericError, ValidationError
from .moments import LagCovariances, lag_covariances
from .validation import as_factors, as_panel, as_weights

#: Candidate penalties scanned by the validation-split selector.
DEFAULT_LAMBDA_GRID = (1e-9, 1e-6, 1e-3, 1e-2, 1e-1, 1.0)

#: Largest instrument lag scanned when boosting is requested.
DEFAULT_KBAR = 5


@dataclass(frozen=True)
class RidgeSystem:
    """Stacked per-unit moment system.

    ``response`` is (2K,) and ``design`` (2K, K+1) for a stacked lag pair
    (0, k) with k >= 1.  With k = 0 only the contemporaneous block is kept:
    K rows, which can never identify all K+1 coefficients.
    """

    unit_index: int
    response: np.ndarray
    design: np.ndarray
    lag_pair: tuple[int, int]

    def __post_init__(self):
        r = np.asarray(self.response, float).copy()
        d = np.asarray(self.design, float).copy()
        r.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "response", r)
        object.__setattr__(self, "design", d)
        object.__setattr__(self, "lag_pair", tuple(int(k) for k in self.lag_pair))


@dataclass(frozen=True)
class RidgeSolution:
    """Solved coefficients for one unit: beta[0] is rho, beta[1:] the loadings."""

    beta: np.ndarray
    lam: float
    effective_rank: int

    def __post_init__(self):
        b = np.asarray(self.beta, float).copy()
        b.flags.writeable = False
        object.__setattr__(self, "beta", b)


@dataclass(frozen=True)
class SaptEstimate:
    """Full estimation output: parameters, penalties, residuals, and the
    per-unit systems that produced them."""

    params: SaptParams
    lambda_used: np.ndarray
    lag_pair: tuple[int, int]
    residuals: np.ndarray
    systems: tuple[RidgeSystem, ...]

    def __post_init__(self):
        lam = np.asarray(self.lambda_used, float).copy()
        res = np.asarray(self.residuals, float).copy()
        lam.flags.writeable = False
        res.flags.writeable = False
        object.__setattr__(self, "lambda_used", lam)
        object.__setattr__(self, "residuals", res)
        object.__setattr__(self, "systems", tuple(self.systems))
        object.__setattr__(self, "lag_pair", tuple(int(k) for k in self.lag_pair))


def build_system(i: int, covs: LagCovariances, weights: SpatialWeights, k: int) -> RidgeSystem:
    """Assemble the stacked system for unit i from precomputed covariances.

    The top block uses lag 0; the bottom block uses lag k.  ``k = 0`` keeps
    only the top block.
    """
    k = int(k)
    if k < 0:
        raise ValidationError(f"instrument lag must be >= 0, got {k}")
    lags = (0,) if k == 0 else (0, k)
    for lag in lags:
        if lag not in covs.sigma_yf or lag not in covs.sigma_f:
            raise ValidationError(f"covariances missing lag {lag}")
    n = covs.sigma_yf[0].shape[0]
    if weights.n_units != n:
        raise ValidationError(f"weights cover {weights.n_units} units, covariances {n}")
    if not 0 <= i < n:
        raise ValidationError(f"unit index {i} outside [0, {n})")
    w_i = weights.values[i]
    response = np.concatenate([covs.sigma_yf[lag][i] for lag in lags])
    spatial_col = np.concatenate([covs.sigma_yf[lag].T @ w_i for lag in lags])
    factor_block = np.vstack([covs.sigma_f[lag].T for lag in lags])
    design = np.column_stack([spatial_col, factor_block])
    return RidgeSystem(unit_index=i, response=response, design=design, lag_pair=(0, k))


def ridge_solve(system: RidgeSystem, lam: float) -> RidgeSolution:
    """Solve one stacked system.

    lam > 0 uses the ridge normal equations; lam = 0 falls back to the
    Moore-Penrose solution via SVD with singular values below
    eps * max(n_rows, n_cols) * s_max treated as zero.
    """
    lam = float(lam)
    if lam < 0:
        raise ValidationError(f"penalty must be nonnegative, got {lam}")
    x, y = system.design, system.response
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("system contains non-finite entries")
    p = x.shape[1]
    if lam > 0:
        beta = np.linalg.solve(x.T @ x + lam * np.eye(p), x.T @ y)
        return RidgeSolution(beta=beta, lam=lam, effective_rank=p)
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    cutoff = np.finfo(float).eps * max(x.shape) * (s[0] if s.size else 0.0)
    keep = s > cutoff
    rank = int(keep.sum())
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    beta = vt.T @ (inv_s * (u.T @ y))
    return RidgeSolution(beta=beta, lam=0.0, effective_rank=rank)


def select_lag_kstar(covs: LagCovariances, kbar: int) -> int:
    """Pick the instrument lag 1..kbar maximizing |det cov_f(k)|.

    The criterion is the product of singular values of cov_f(k); ties break
    toward the smaller lag.
    """
    kbar = int(kbar)
    if kbar < 1:
        raise ValidationError(f"kbar must be >= 1, got {kbar}")
    best_k, best_val = None, -np.inf
    for k in range(1, kbar + 1):
        if k not in covs.sigma_f:
            raise ValidationError(f"covariances missing factor lag {k}")
        val = float(np.prod(np.linalg.svd(covs.sigma_f[k], compute_uv=False)))
        if val > best_val:
            best_k, best_val = k, val
    return best_k


def _solve_all_units(covs, weights, k, lam_vec):
    n = weights.n_units
    systems, betas = [], np.empty((n, covs.sigma_f[0].shape[0] + 1))
    for i in range(n):
        system = build_system(i, covs, weights, k)
        systems.append(system)
        betas[i] = ridge_solve(system, lam_vec[i]).beta
    return systems, betas


def _structural_residuals(y, f, weights, rho, loadings):
    # eps_t = y_t - D(rho) W y_t - B f_t, row-wise over the panel
    return y - (y @ weights.values.T) * rho[None, :] - f @ loadings.T


def _validation_losses(y, f, weights, t_split, candidates, k):
    """Per-unit validation loss for each penalty candidate.

    Coefficients are fit on observations 1..t_split and scored by the mean
    squared structural residual over t_split+1..T.  Returns (n_cand, N).
    """
    n = y.shape[1]
    with warnings.catch_warnings():
        # segments of centered data carry no demeaned flag; silence the nag
        warnings.simplefilter("ignore", DemeanWarning)
        train_panel = PanelData(y[:t_split], demeaned=False)
        train_factors = FactorSet(f[:t_split], demeaned=False)
        lags = sorted({0, k}) if k > 0 else [0]
        covs = lag_covariances(train_panel, train_factors, yf_lags=lags, f_lags=lags)
    y_val, f_val = y[t_split:], f[t_split:]
    losses = np.empty((len(candidates), n))
    for row, lam in enumerate(candidates):
        _, betas = _solve_all_units(covs, weights, k, np.full(n, float(lam)))
        resid = _structural_residuals(y_val, f_val, weights, betas[:, 0], betas[:, 1:])
        losses[row] = (resid ** 2).mean(axis=0)
    return losses


def select_lambda(
    panel: PanelData,
    factors: FactorSet,
    weights: SpatialWeights,
    candidates=DEFAULT_LAMBDA_GRID,
    split_fraction: float = 0.8,
    k: int = 1,
    mode: str = "per-unit",
):
    """Choose ridge penalties by a chronological validation split.

    Fits each candidate on the first floor(split_fraction * T) observations
    and scores it on the remainder; ties go to the larger penalty.  Returns
    a length-N vector in "per-unit" mode or a single float in "shared" mode.
    """
    candidates = sorted(float(c) for c in candidates)
    if not candidates:
        raise ValidationError("candidate set is empty")
    if any(c < 0 for c in candidates):
        raise ValidationError("penalty candidates must be nonnegative")
    if not 0.0 < split_fraction < 1.0:
        raise ValidationError(f"split_fraction must lie in (0, 1), got {split_fraction}")
    t = panel.n_periods
    kf = factors.n_factors
    t_split = int(np.floor(split_fraction * t))
    if t_split < kf + 2 or t - t_split < kf + 2:
        raise ValidationError(
            f"split at T1={t_split} leaves fewer than K+2={kf + 2} observations on one side"
        )
    losses = _validation_losses(panel.values, factors.values, weights, t_split, candidates, k)
    if mode == "shared":
        totals = losses.sum(axis=1)
        best = 0
        for row in range(1, len(candidates)):
            if totals[row] <= totals[best]:  # tie -> larger penalty
                best = row
        return candidates[best]
    if mode != "per-unit":
        raise ValidationError(f"unknown lambda selection mode {mode!r}")
    n = panel.n_units
    chosen = np.empty(n)
    for i in range(n):
        best = 0
        for row in range(1, len(candidates)):
            if losses[row, i] <= losses[best, i]:
                best = row
        chosen[i] = candidates[best]
    return chosen


def _resolve_lambda(lam, panel, factors, weights, k, lambda_grid, split_fraction):
    n = panel.n_units
    if isinstance(lam, str):
        if lam != "auto":
            raise ValidationError(f"lam must be 'auto', a float, or a length-N vector, not {lam!r}")
        return select_lambda(panel, factors, weights, lambda_grid, split_fraction, k=k)
    lam_arr = np.asarray(lam, float)
    if lam_arr.ndim == 0:
        lam_arr = np.full(n, float(lam_arr))
    if lam_arr.shape != (n,):
        raise ValidationError(f"per-unit penalties must have length {n}, got {lam_arr.shape}")
    if np.any(lam_arr < 0):
        raise ValidationError("penalties must be nonnegative")
    return lam_arr


def estimate_observed(
    panel: PanelData,
    factors: FactorSet,
    weights: SpatialWeights,
    lam="auto",
    k=1,
    kbar: int = DEFAULT_KBAR,
    lambda_grid=DEFAULT_LAMBDA_GRID,
    split_fraction: float = 0.8,
) -> SaptEstimate:
    """Estimate (rho, B) from an observed-factor panel.

    Parameters
    ----------
    lam : "auto", float, or array of length N
        Ridge penalty; "auto" runs the validation-split selector.
    k : int or "boost"
        Instrument lag for the stacked system.  0 keeps only the
        contemporaneous block; "boost" scans 1..kbar for the lag with the
        strongest factor autocovariance.
    """
    panel = as_panel(panel)
    factors = as_factors(factors)
    weights = as_weights(weights)
    if panel.n_units != weights.n_units:
        raise ValidationError(
            f"panel has N={panel.n_units} units but weights cover {weights.n_units}"
        )
    boost = isinstance(k, str)
    if boost and k != "boost":
        raise ValidationError(f"k must be an integer or 'boost', got {k!r}")
    scan_lags = range(1, kbar + 1) if boost else ([] if int(k) == 0 else [int(k)])
    lags = sorted({0, *scan_lags})
    covs = lag_covariances(panel, factors, yf_lags=lags, f_lags=lags)
    k_used = select_lag_kstar(covs, kbar) if boost else int(k)
    lam_vec = _resolve_lambda(lam, panel, factors, weights, k_used, lambda_grid, split_fraction)
    systems, betas = _solve_all_units(covs, weights, k_used, lam_vec)
    params = SaptParams(rho=betas[:, 0], loadings=betas[:, 1:])
    residuals = _structural_residuals(
        panel.values, factors.values, weights, params.rho, params.loadings
    )
    return SaptEstimate(
        params=params,
        lambda_used=lam_vec,
        lag_pair=(0, k_used),
        residuals=residuals,
        systems=tuple(systems),
    )


class SpatialYuleWalker(BaseEstimator):
    """Sklearn-style wrapper around :func:`estimate_observed`.

    The weight matrix is a hyperparameter; ``fit`` takes the panel and the
    observed factors, demeans both with training means, and exposes the
    fitted coefficients as trailing-underscore attributes.  ``predict``
    returns reduced-form conditional means for new factor observations, with
    the training means added back.
    """

    def __init__(self, weights=None, lam="auto", k=1, kbar=DEFAULT_KBAR,
                 lambda_grid=DEFAULT_LAMBDA_GRID, split_fraction=0.8):
        self.weights = weights
        self.lam = lam
        self.k = k
        self.kbar = kbar
        self.lambda_grid = lambda_grid
        self.split_fraction = split_fraction

    def fit(self, y, f):
        if self.weights is None:
            raise ValidationError("SpatialYuleWalker requires a weight matrix")
        weights = as_weights(self.weights)
        panel = as_panel(y)
        factors = as_factors(f)
        self.y_mean_ = panel.values.mean(axis=0)
        self.f_mean_ = factors.values.mean(axis=0)
        panel = PanelData(panel.values - self.y_mean_, panel.unit_ids, demeaned=True)
        factors = FactorSet(factors.values - self.f_mean_, factors.factor_ids, demeaned=True)
        self.estimate_ = estimate_observed(
            panel, factors, weights,
            lam=self.lam, k=self.k, kbar=self.kbar,
            lambda_grid=self.lambda_grid, split_fraction=self.split_fraction,
        )
        self.rho_ = self.estimate_.params.rho
        self.loadings_ = self.estimate_.params.loadings
        self.lambda_ = self.estimate_.lambda_used
        self.lag_pair_ = self.estimate_.lag_pair
        self.residuals_ = self.estimate_.residuals
        return self

    def predict(self, f):
        if not hasattr(self, "estimate_"):
            raise NumericError("estimator is not fitted")
        from .forecast import predict_observed  # local import avoids a cycle

        f_values = f.values if isinstance(f, FactorSet) else np.asarray(f, float)
        predicted = predict_observed(
            self.estimate_, as_weights(self.weights), f_values - self.f_mean_
        )
        return predicted + self.y_mean_
