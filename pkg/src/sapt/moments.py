"""Lagged sample covariance objects built from demeaned panels and factors.

Every quantity here is a raw product moment with divisor T, the full sample
length, regardless of the lag:

    cov_yf(k) = (1/T) * sum_{t=k+1..T} y_t f_{t-k}'
    cov_f(k)  = (1/T) * sum_{t=k+1..T} f_t f_{t-k}'
    cov_y(k)  = (1/T) * sum_{t=k+1..T} y_t y_{t-k}'

No small-sample bias correction is applied and no mean is subtracted: inputs
are expected to be demeaned already (a warning is issued otherwise).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .data import FactorSet, PanelData
from .exceptions import DemeanWarning, ValidationError


@dataclass(frozen=True)
class LagCovariances:
    """Read-only bundle of lagged covariances keyed by lag.

    ``sigma_yf[k]`` is N x K, ``sigma_f[k]`` is K x K, ``sigma_y[k]`` is
    N x N (k >= 1 only).  ``T_used`` records the divisor; 0 marks analytic
    population covariances.
    """

    sigma_yf: Mapping[int, np.ndarray] = field(default_factory=dict)
    sigma_f: Mapping[int, np.ndarray] = field(default_factory=dict)
    sigma_y: Mapping[int, np.ndarray] = field(default_factory=dict)
    T_used: int = 0

    def __post_init__(self):
        for name in ("sigma_yf", "sigma_f", "sigma_y"):
            frozen = {}
            for k, mat in dict(getattr(self, name)).items():
                mat = np.asarray(mat, float).copy()
                mat.flags.writeable = False
                frozen[int(k)] = mat
            object.__setattr__(self, name, MappingProxyType(frozen))


def _lagged_product(left: np.ndarray, right: np.ndarray, k: int, divisor: int) -> np.ndarray:
    # sum_{t=k+1..T} left_t right_{t-k}' with rows indexed from t=1
    t = left.shape[0]
    return left[k:].T @ right[: t - k] / divisor


def _check_lag(k: int, t: int, smallest: int = 0) -> int:
    k = int(k)
    if k < smallest or k > t - 2:
        raise ValidationError(f"lag {k} outside valid range [{smallest}, {t - 2}] for T={t}")
    return k


def _warn_not_demeaned(obj, what: str) -> None:
    if not obj.demeaned:
        warnings.warn(f"{what} is not flagged as demeaned; covariances assume centered data",
                      DemeanWarning, stacklevel=3)


def cross_cov(panel: PanelData, factors: FactorSet, k: int) -> np.ndarray:
    """Lag-k cross covariance between panel and factors, N x K."""
    if panel.n_periods != factors.n_periods:
        raise ValidationError(
            f"panel has T={panel.n_periods} but factors have T={factors.n_periods}"
        )
    k = _check_lag(k, panel.n_periods)
    _warn_not_demeaned(panel, "panel")
    _warn_not_demeaned(factors, "factor set")
    return _lagged_product(panel.values, factors.values, k, panel.n_periods)


def auto_cov_f(factors: FactorSet, k: int) -> np.ndarray:
    """Lag-k autocovariance of the factors, K x K."""
    k = _check_lag(k, factors.n_periods)
    _warn_not_demeaned(factors, "factor set")
    return _lagged_product(factors.values, factors.values, k, factors.n_periods)


def auto_cov_y(panel: PanelData, k: int) -> np.ndarray:
    """Lag-k autocovariance of the panel, N x N.  Requires k >= 1."""
    k = _check_lag(k, panel.n_periods, smallest=1)
    _warn_not_demeaned(panel, "panel")
    return _lagged_product(panel.values, panel.values, k, panel.n_periods)


def lag_covariances(
    panel: PanelData,
    factors: FactorSet | None = None,
    yf_lags=(),
    f_lags=(),
    y_lags=(),
) -> LagCovariances:
    """Assemble a LagCovariances bundle for the requested lags."""
    t = panel.n_periods
    _warn_not_demeaned(panel, "panel")
    sigma_yf, sigma_f, sigma_y = {}, {}, {}
    if factors is not None:
        if factors.n_periods != t:
            raise ValidationError(
                f"panel has T={t} but factors have T={factors.n_periods}"
            )
        _warn_not_demeaned(factors, "factor set")
        for k in sorted({int(k) for k in yf_lags}):
            _check_lag(k, t)
            sigma_yf[k] = _lagged_product(panel.values, factors.values, k, t)
        for k in sorted({int(k) for k in f_lags}):
            _check_lag(k, t)
            sigma_f[k] = _lagged_product(factors.values, factors.values, k, t)
    elif yf_lags or f_lags:
        raise ValidationError("factor lags requested but no factors supplied")
    for k in sorted({int(k) for k in y_lags}):
        _check_lag(k, t, smallest=1)
        sigma_y[k] = _lagged_product(panel.values, panel.values, k, t)
    return LagCovariances(sigma_yf=sigma_yf, sigma_f=sigma_f, sigma_y=sigma_y, T_used=t)
