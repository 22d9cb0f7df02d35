"""Latent-factor pipeline: autocovariance eigenanalysis and two-step estimation.

When the factors driving y_t = D(rho) W y_t + B f_t + eps_t are unobserved,
the reduced form y_t = L f_t + xi_t is an approximate factor model whose
loading space is spanned by the top eigenvectors of

    M = sum_{k=1..k0} cov_y(k) cov_y(k)',

because the white-noise idiosyncratic term drops out of every lagged
autocovariance.  Factors are recovered as f_t = L' y_t / N and fed back into
the ridge Yule-Walker machinery.  Loadings and factor-coefficients are
identified only up to a K x K rotation; the spatial coefficients rho are not
rotated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .data import FactorSet, PanelData, SpatialWeights
from .exceptions import NumericError, ValidationError
from .moments import lag_covariances
from .validation import as_panel, as_weights
from .yule_walker import (
    DEFAULT_KBAR,
    DEFAULT_LAMBDA_GRID,
    SaptEstimate,
    SaptParams,
    _resolve_lambda,
    _solve_all_units,
    _structural_residuals,
    _validation_losses,
    select_lag_kstar,
)

#: Default number of autocovariance lags accumulated into M.
DEFAULT_K0 = 2

#: Default upper bound for the information-criterion scan.
DEFAULT_IC_BOUND = 8


@dataclass(frozen=True)
class LatentFactorFit:
    """Eigenanalysis output.

    ``loadings`` holds the top-K eigenvectors of M scaled by sqrt(N), so
    loadings'loadings / N = I_K; ``factors`` holds the recovered series
    f_t = loadings' y_t / N; ``eigenvalues`` is the full descending spectrum.
    """

    loadings: np.ndarray
    factors: np.ndarray
    eigenvalues: np.ndarray
    k0_used: int

    def __post_init__(self):
        for name in ("loadings", "factors", "eigenvalues"):
            arr = np.asarray(getattr(self, name), float).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]


def build_M(panel: PanelData, k0: int) -> np.ndarray:
    """Accumulate M = sum_{k=1..k0} cov_y(k) cov_y(k)', symmetrized."""
    k0 = int(k0)
    if k0 < 1 or k0 > panel.n_periods - 2:
        raise ValidationError(f"k0 must lie in [1, T-2], got {k0} with T={panel.n_periods}")
    covs = lag_covariances(panel, y_lags=range(1, k0 + 1))
    n = panel.n_units
    m = np.zeros((n, n))
    for k in range(1, k0 + 1):
        s = covs.sigma_y[k]
        m += s @ s.T
    return (m + m.T) / 2.0


def _descending_eig(m: np.ndarray):
    try:
        eigenvalues, vectors = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"eigendecomposition failed: {exc}; matrix norm {np.linalg.norm(m):.3e}, "
            f"condition estimate {np.linalg.cond(m):.3e}"
        ) from exc
    order = np.argsort(eigenvalues)[::-1]
    return eigenvalues[order], vectors[:, order]


def extract_loadings(m: np.ndarray, n_factors: int):
    """Top-K eigenvectors of M scaled by sqrt(N), plus the full spectrum.

    Sign convention: in each column the entry of largest magnitude is made
    positive, so repeated calls on the same matrix are bit-identical.
    """
    m = np.asarray(m, float)
    n = m.shape[0]
    n_factors = int(n_factors)
    if not 1 <= n_factors <= n - 1:
        raise ValidationError(f"number of factors must lie in [1, N-1], got {n_factors}")
    eigenvalues, vectors = _descending_eig(m)
    top = vectors[:, :n_factors] * np.sqrt(n)
    anchor = np.argmax(np.abs(top), axis=0)
    signs = np.sign(top[anchor, np.arange(n_factors)])
    signs[signs == 0] = 1.0
    return top * signs, eigenvalues


def recover_factors(loadings: np.ndarray, panel: PanelData) -> np.ndarray:
    """Recovered factor series, row t equal to loadings' y_t / N."""
    loadings = np.asarray(loadings, float)
    if loadings.shape[0] != panel.n_units:
        raise ValidationError(
            f"loadings have {loadings.shape[0]} rows but panel has {panel.n_units} units"
        )
    return panel.values @ loadings / panel.n_units


def _ic_penalty(name: str, t: int, n: int) -> float:
    if name == "ic1":
        return (n + t) / (n * t) * np.log(n * t / (n + t))
    if name == "ic2":
        return (n + t) / (n * t) * np.log(min(n, t))
    raise ValidationError(f"penalty must be 'ic1' or 'ic2', got {name!r}")


def select_K_ic(panel: PanelData, max_factors: int = DEFAULT_IC_BOUND,
                penalty: str = "ic1", k0: int = DEFAULT_K0) -> int:
    """Information-criterion estimate of the factor count.

    Minimizes log of the mean squared projection residual plus j * g(T, N)
    over j = 0..max_factors, with loadings taken from the eigenanalysis of M.
    Ties break toward fewer factors.
    """
    t, n = panel.values.shape
    max_factors = int(max_factors)
    if not 1 <= max_factors < min(n, t):
        raise ValidationError(
            f"max_factors must lie in [1, min(N, T)), got {max_factors}"
        )
    g = _ic_penalty(penalty, t, n)
    m = build_M(panel, k0)
    _, vectors = _descending_eig(m)
    y = panel.values
    best_j, best_obj = 0, np.log((y ** 2).sum() / (n * t))
    for j in range(1, max_factors + 1):
        lam_j = vectors[:, :j] * np.sqrt(n)
        resid = y - (y @ lam_j) @ lam_j.T / n
        obj = np.log((resid ** 2).sum() / (n * t)) + j * g
        if obj < best_obj:
            best_j, best_obj = j, obj
    return best_j


def select_K_ratio(eigenvalues, max_ratio_index: int | None = None) -> int:
    """Eigenvalue-ratio estimate: argmin over l of mu_{l+1} / mu_l.

    Scans l = 1..R with R defaulting to floor(N/2); zero denominators score
    as +inf; ties break toward smaller l.
    """
    mu = np.asarray(eigenvalues, float)
    if mu.ndim != 1 or mu.size < 2:
        raise ValidationError("need at least two eigenvalues")
    n = mu.size
    r = int(np.floor(n / 2)) if max_ratio_index is None else int(max_ratio_index)
    if not 1 <= r <= n - 1:
        raise ValidationError(f"ratio scan bound must lie in [1, N-1], got {r}")
    best_l, best_ratio = 1, np.inf
    for l in range(1, r + 1):
        ratio = mu[l] / mu[l - 1] if mu[l - 1] != 0 else np.inf
        if ratio < best_ratio:
            best_l, best_ratio = l, ratio
    return best_l


def _select_lambda_latent(panel, weights, loadings_fn, candidates, split_fraction, k):
    """Penalty selection with factors re-estimated from the training segment."""
    y = panel.values
    t = y.shape[0]
    t_split = int(np.floor(split_fraction * t))
    train = PanelData(y[:t_split], demeaned=False)
    loadings = loadings_fn(train)
    f = y @ loadings / y.shape[1]
    kf = f.shape[1]
    if t_split < kf + 2 or t - t_split < kf + 2:
        raise ValidationError(
            f"split at T1={t_split} leaves fewer than K+2={kf + 2} observations on one side"
        )
    candidates = sorted(float(c) for c in candidates)
    losses = _validation_losses(y, f, weights, t_split, candidates, k)
    n = y.shape[1]
    chosen = np.empty(n)
    for i in range(n):
        best = 0
        for row in range(1, len(candidates)):
            if losses[row, i] <= losses[best, i]:
                best = row
        chosen[i] = candidates[best]
    return chosen


def estimate_latent(
    panel: PanelData,
    weights: SpatialWeights,
    k0: int = DEFAULT_K0,
    n_factors="ratio",
    lam=1.0,
    k=1,
    kbar: int = DEFAULT_KBAR,
    lambda_grid=DEFAULT_LAMBDA_GRID,
    split_fraction: float = 0.8,
    max_factors: int = DEFAULT_IC_BOUND,
):
    """Two-step estimation with latent factors.

    Step one extracts loadings and factors from the eigenanalysis of M;
    step two reruns the ridge Yule-Walker solve with the recovered factors.
    ``n_factors`` is an integer or one of "ratio", "ic1", "ic2".  Returns
    (SaptEstimate, LatentFactorFit); the estimated loadings in the
    SaptEstimate are identified only up to the factor rotation.
    """
    panel = as_panel(panel)
    weights = as_weights(weights)
    if panel.n_units != weights.n_units:
        raise ValidationError(
            f"panel has N={panel.n_units} units but weights cover {weights.n_units}"
        )
    m = build_M(panel, k0)
    if isinstance(n_factors, str):
        if n_factors == "ratio":
            eigenvalues, _ = _descending_eig(m)
            k_factors = select_K_ratio(eigenvalues)
        elif n_factors in ("ic1", "ic2"):
            k_factors = select_K_ic(panel, max_factors, penalty=n_factors, k0=k0)
            if k_factors == 0:
                raise NumericError(
                    "information criterion selected zero factors; "
                    "the panel shows no common dynamics"
                )
        else:
            raise ValidationError(
                f"n_factors must be an int, 'ratio', 'ic1', or 'ic2', got {n_factors!r}"
            )
    else:
        k_factors = int(n_factors)
    loadings, eigenvalues = extract_loadings(m, k_factors)
    factor_values = recover_factors(loadings, panel)
    factors = FactorSet(factor_values, demeaned=panel.demeaned)
    fit = LatentFactorFit(
        loadings=loadings, factors=factor_values, eigenvalues=eigenvalues, k0_used=int(k0)
    )

    boost = isinstance(k, str)
    if boost and k != "boost":
        raise ValidationError(f"k must be an integer or 'boost', got {k!r}")
    scan_lags = range(1, kbar + 1) if boost else ([] if int(k) == 0 else [int(k)])
    lags = sorted({0, *scan_lags})
    covs = lag_covariances(panel, factors, yf_lags=lags, f_lags=lags)
    k_used = select_lag_kstar(covs, kbar) if boost else int(k)

    if isinstance(lam, str) and lam == "auto":
        def train_loadings(train_panel):
            m_train = build_M(train_panel, k0)
            l_train, _ = extract_loadings(m_train, k_factors)
            return l_train

        lam_vec = _select_lambda_latent(
            panel, weights, train_loadings, lambda_grid, split_fraction, k_used
        )
    else:
        lam_vec = _resolve_lambda(lam, panel, factors, weights, k_used,
                                  lambda_grid, split_fraction)
    systems, betas = _solve_all_units(covs, weights, k_used, lam_vec)
    params = SaptParams(rho=betas[:, 0], loadings=betas[:, 1:])
    residuals = _structural_residuals(
        panel.values, factor_values, weights, params.rho, params.loadings
    )
    estimate = SaptEstimate(
        params=params,
        lambda_used=lam_vec,
        lag_pair=(0, k_used),
        residuals=residuals,
        systems=tuple(systems),
    )
    return estimate, fit


class LatentSpatialYuleWalker(BaseEstimator):
    """Sklearn-style wrapper around :func:`estimate_latent`.

    ``fit`` takes only the panel; factors are recovered internally.
    ``predict`` maps new panel observations to their common component
    through the training loadings (a fit, not an ex-ante forecast).
    """

    def __init__(self, weights=None, k0=DEFAULT_K0, n_factors="ratio", lam=1.0,
                 k=1, kbar=DEFAULT_KBAR, lambda_grid=DEFAULT_LAMBDA_GRID,
                 split_fraction=0.8, max_factors=DEFAULT_IC_BOUND):
        self.weights = weights
        self.k0 = k0
        self.n_factors = n_factors
        self.lam = lam
        self.k = k
        self.kbar = kbar
        self.lambda_grid = lambda_grid
        self.split_fraction = split_fraction
        self.max_factors = max_factors

    def fit(self, y):
        if self.weights is None:
            raise ValidationError("LatentSpatialYuleWalker requires a weight matrix")
        panel = as_panel(y)
        self.y_mean_ = panel.values.mean(axis=0)
        panel = PanelData(panel.values - self.y_mean_, panel.unit_ids, demeaned=True)
        self.estimate_, self.factor_fit_ = estimate_latent(
            panel, as_weights(self.weights),
            k0=self.k0, n_factors=self.n_factors, lam=self.lam, k=self.k,
            kbar=self.kbar, lambda_grid=self.lambda_grid,
            split_fraction=self.split_fraction, max_factors=self.max_factors,
        )
        self.rho_ = self.estimate_.params.rho
        self.loadings_ = self.estimate_.params.loadings
        self.factor_loadings_ = self.factor_fit_.loadings
        self.factors_ = self.factor_fit_.factors
        self.eigenvalues_ = self.factor_fit_.eigenvalues
        self.n_factors_ = self.factor_fit_.n_factors
        self.lambda_ = self.estimate_.lambda_used
        return self

    def predict(self, y):
        if not hasattr(self, "estimate_"):
            raise NumericError("estimator is not fitted")
        from .forecast import predict_latent  # local import avoids a cycle

        values = y.values if isinstance(y, PanelData) else np.asarray(y, float)
        predicted = predict_latent(
            self.estimate_, self.factor_fit_, as_weights(self.weights),
            values - self.y_mean_,
        )
        return predicted + self.y_mean_
