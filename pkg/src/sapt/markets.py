"""Mean-variance machinery: tangency portfolios, spatial rho, pricing identity.

The spatial analogue of market beta for asset j is

    rho_j = Cov(r_j, w_j'r) / Var(w_j'r),

with w_j the tangency portfolio of the market excluding asset j.  In a
complete market (asset j exactly replicable by the others) the one-factor
pricing identity mu_j - rf = rho_j (mu_{j,M} - rf) holds; the multi-factor
extension adds loading-weighted factor premia.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import NumericError, ValidationError

#: Reduced covariance counts as invertible above this smallest-eigenvalue bound.
MIN_COV_EIGENVALUE = 1e-10


@dataclass(frozen=True)
class MarketInputs:
    """Expected returns, return covariance (PSD), and the risk-free rate."""

    mu: np.ndarray
    cov: np.ndarray
    rf: float

    def __post_init__(self):
        mu = np.asarray(self.mu, float).copy()
        cov = np.asarray(self.cov, float).copy()
        if mu.ndim != 1:
            raise ValidationError(f"mu must be a vector, got shape {mu.shape}")
        n = mu.shape[0]
        if cov.shape != (n, n):
            raise ValidationError(f"cov must be {n} x {n}, got {cov.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
            raise ValidationError("market inputs contain non-finite entries")
        if np.max(np.abs(cov - cov.T)) > 1e-10:
            raise ValidationError("covariance is not symmetric within 1e-10")
        if np.linalg.eigvalsh(cov)[0] < -1e-10:
            raise ValidationError("covariance has an eigenvalue below -1e-10")
        mu.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "rf", float(self.rf))

    @property
    def n_assets(self) -> int:
        return self.mu.shape[0]


def tangency_weights(market: MarketInputs) -> np.ndarray:
    """Tangency portfolio: w proportional to cov^{-1}(mu - rf 1), summing to 1."""
    excess = market.mu - market.rf
    if np.max(np.abs(excess)) < 1e-14:
        raise ValidationError("all excess returns are zero; tangency undefined")
    if np.linalg.eigvalsh(market.cov)[0] <= MIN_COV_EIGENVALUE:
        raise NumericError("covariance is numerically singular; tangency undefined")
    raw = np.linalg.solve(market.cov, excess)
    normalizer = raw.sum()
    if abs(normalizer) < 1e-14:
        raise NumericError("tangency weights sum to zero; cannot normalize")
    if normalizer < 0:
        warnings.warn("tangency normalizer is negative (net-short portfolio)",
                      UserWarning, stacklevel=2)
    return raw / normalizer


def leave_one_out_tangency(j: int, market: MarketInputs) -> np.ndarray:
    """Tangency of the submarket without asset j, re-embedded with weight 0 at j."""
    n = market.n_assets
    if n < 3:
        raise ValidationError(f"need at least 3 assets, got {n}")
    if not 0 <= j < n:
        raise ValidationError(f"asset index {j} outside [0, {n})")
    keep = np.arange(n) != j
    sub = MarketInputs(mu=market.mu[keep], cov=market.cov[np.ix_(keep, keep)], rf=market.rf)
    w = np.zeros(n)
    w[keep] = tangency_weights(sub)
    return w


def spatial_rho(j: int, market: MarketInputs, w_j) -> float:
    """rho_j = Cov(r_j, w_j'r) / Var(w_j'r) for a given portfolio w_j."""
    w = np.asarray(w_j, float)
    if w.shape != (market.n_assets,):
        raise ValidationError(f"portfolio must have length {market.n_assets}, got {w.shape}")
    variance = float(w @ market.cov @ w)
    if variance <= 1e-12:
        raise NumericError(f"portfolio variance {variance:.3e} is degenerate")
    return float((market.cov @ w)[j] / variance)


def pricing_identity_gap(j: int, market: MarketInputs, w_j=None) -> float:
    """Residual of mu_j - rf = rho_j (mu_{j,M} - rf); zero in a complete market.

    Defaults to the leave-one-out tangency portfolio for w_j.
    """
    w = leave_one_out_tangency(j, market) if w_j is None else np.asarray(w_j, float)
    rho_j = spatial_rho(j, market, w)
    return float((market.mu[j] - market.rf) - rho_j * (w @ market.mu - market.rf))


def pricing_decomposition(j: int, rho_j: float, w_j, mu0, rf: float,
                          factor_premia, delta_j) -> float:
    """Residual of the multi-factor spatial pricing identity for asset j.

    Returns (mu0_j - rf) - rho_j w_j'(mu0 - rf 1) - delta_j' factor_premia,
    where factor_premia holds the excess factor returns mu_k - rf.
    """
    w = np.asarray(w_j, float)
    mu0 = np.asarray(mu0, float)
    premia = np.asarray(factor_premia, float)
    delta = np.asarray(delta_j, float)
    if w.shape != mu0.shape:
        raise ValidationError(f"w_j has shape {w.shape} but mu0 has {mu0.shape}")
    if premia.shape != delta.shape:
        raise ValidationError(
            f"factor premia have shape {premia.shape} but delta_j has {delta.shape}"
        )
    spatial_premium = float(w @ (mu0 - rf))
    return float((mu0[j] - rf) - rho_j * spatial_premium - delta @ premia)
