"""Core containers for panels, factors, spatial weights, and model parameters.

Data orientation is fixed as time-by-unit: a panel is a T x N matrix whose
row t holds the cross-section observed at time t.  Model equations written
with column vectors y_t translate to rows of these matrices; every operation
in the package follows this convention.

All containers are immutable after construction (arrays are copied and
marked read-only), so they can be shared freely across threads or processes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError

#: Relative tolerance for the "column means are zero" check on demeaned data.
DEMEAN_RTOL = 1e-10

#: Rows of a row-normalized weight matrix must sum to 1 within this tolerance.
ROW_SUM_TOL = 1e-12

#: I - D(rho) W counts as invertible iff its smallest singular value exceeds this.
MIN_SINGULAR_VALUE = 1e-10


def _freeze(values, name: str, ndim: int = 2) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(np.atleast_2d(arr)))[0]
        raise ValidationError(
            f"{name} contains a non-finite entry at row {bad[0]}, column {bad[1]}"
        )
    arr.flags.writeable = False
    return arr


def _default_ids(prefix: str, n: int) -> tuple[str, ...]:
    return tuple(f"{prefix}{j + 1}" for j in range(n))


def _check_ids(ids, n: int, what: str) -> tuple[str, ...]:
    ids = tuple(str(x) for x in ids)
    if len(ids) != n:
        raise ValidationError(f"expected {n} {what}, got {len(ids)}")
    if len(set(ids)) != n:
        raise ValidationError(f"{what} must be unique")
    return ids


def _check_demeaned(values: np.ndarray, what: str) -> None:
    means = values.mean(axis=0)
    stds = values.std(axis=0)
    bad = np.abs(means) > DEMEAN_RTOL * stds
    if np.any(bad):
        col = int(np.argmax(bad))
        raise ValidationError(
            f"{what} flagged demeaned but column {col} has mean {means[col]:.3e} "
            f"(std {stds[col]:.3e})"
        )


@dataclass(frozen=True)
class PanelData:
    """A T x N panel of observations, one column per unit.

    Parameters
    ----------
    values : array, shape (T, N)
        Observations; row t is the cross-section at time t.  T >= 2, N >= 2,
        all entries finite.
    unit_ids : sequence of str, optional
        N unique identifiers; generated as "u1".."uN" when omitted.
    demeaned : bool
        When True, every column mean must be zero within ``DEMEAN_RTOL``
        relative to its standard deviation.
    """

    values: np.ndarray
    unit_ids: tuple[str, ...] = ()
    demeaned: bool = False

    def __post_init__(self):
        values = _freeze(self.values, "panel values")
        t, n = values.shape
        if t < 2 or n < 2:
            raise ValidationError(f"panel needs T >= 2 and N >= 2, got shape {values.shape}")
        ids = self.unit_ids or _default_ids("u", n)
        ids = _check_ids(ids, n, "unit ids")
        if self.demeaned:
            _check_demeaned(values, "panel")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "unit_ids", ids)

    @property
    def n_periods(self) -> int:
        return self.values.shape[0]

    @property
    def n_units(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FactorSet:
    """A T x K matrix of factor observations (K >= 1, K < T)."""

    values: np.ndarray
    factor_ids: tuple[str, ...] = ()
    demeaned: bool = False

    def __post_init__(self):
        values = _freeze(self.values, "factor values")
        t, k = values.shape
        if k < 1:
            raise ValidationError("need at least one factor")
        if k >= t:
            raise ValidationError(f"need K < T, got K={k}, T={t}")
        ids = self.factor_ids or _default_ids("f", k)
        ids = _check_ids(ids, k, "factor ids")
        if self.demeaned:
            _check_demeaned(values, "factor set")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "factor_ids", ids)

    @property
    def n_periods(self) -> int:
        return self.values.shape[0]

    @property
    def n_factors(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SpatialWeights:
    """An N x N spatial weight matrix with zero diagonal.

    A unit with an all-zero row (no neighbors) is rejected outright: its
    spatial coefficient would be unidentified.  When ``row_normalized`` is
    set, every row must sum to 1 within ``ROW_SUM_TOL``.
    """

    values: np.ndarray
    row_normalized: bool = False

    def __post_init__(self):
        values = _freeze(self.values, "weight matrix")
        n, m = values.shape
        if n != m:
            raise ValidationError(f"weight matrix must be square, got shape {values.shape}")
        if np.any(np.diag(values) != 0.0):
            bad = int(np.argmax(np.diag(values) != 0.0))
            raise ValidationError(f"weight matrix diagonal must be exactly zero (unit {bad})")
        row_sums = np.abs(values).sum(axis=1)
        if np.any(row_sums == 0.0):
            bad = int(np.argmax(row_sums == 0.0))
            raise ValidationError(f"unit {bad} has no neighbors (all-zero weight row)")
        if self.row_normalized:
            sums = values.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
                bad = int(np.argmax(np.abs(sums - 1.0)))
                raise ValidationError(
                    f"row {bad} sums to {sums[bad]!r}, not 1, despite row_normalized=True"
                )
        object.__setattr__(self, "values", values)

    @property
    def n_units(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SaptParams:
    """Structural parameters: spatial coefficients rho (N,) and loadings (N, K)."""

    rho: np.ndarray
    loadings: np.ndarray

    def __post_init__(self):
        rho = _freeze(self.rho, "rho", ndim=1)
        loadings = _freeze(self.loadings, "loadings")
        if loadings.shape[0] != rho.shape[0]:
            raise ValidationError(
                f"rho has {rho.shape[0]} units but loadings has {loadings.shape[0]} rows"
            )
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "loadings", loadings)

    @property
    def n_units(self) -> int:
        return self.rho.shape[0]

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]


@dataclass(frozen=True)
class SystemDiagnostics:
    """Invertibility diagnostics for I - D(rho) W."""

    min_singular_value: float
    spectral_radius: float
    ok: bool


def demean(data):
    """Subtract column means; returns the same container type with the flag set.

    Idempotent: demeaning already-centered data changes nothing beyond
    rounding at machine precision.
    """
    centered = data.values - data.values.mean(axis=0)
    if isinstance(data, PanelData):
        return PanelData(centered, data.unit_ids, demeaned=True)
    if isinstance(data, FactorSet):
        return FactorSet(centered, data.factor_ids, demeaned=True)
    raise TypeError(f"demean expects PanelData or FactorSet, got {type(data).__name__}")


def system_matrix(params: SaptParams, weights: SpatialWeights) -> np.ndarray:
    """Return S(rho) = I_N - D(rho) W."""
    if params.n_units != weights.n_units:
        raise ValidationError(
            f"params cover {params.n_units} units but weights cover {weights.n_units}"
        )
    n = params.n_units
    return np.eye(n) - params.rho[:, None] * weights.values


def validate_system(params: SaptParams, weights: SpatialWeights) -> SystemDiagnostics:
    """Check that I - D(rho) W is numerically invertible.

    Returns the smallest singular value of S(rho), the spectral radius of
    D(rho) W, and a pass flag (pass iff the smallest singular value exceeds
    ``MIN_SINGULAR_VALUE``).
    """
    s = system_matrix(params, weights)
    singular_values = np.linalg.svd(s, compute_uv=False)
    radius = float(np.max(np.abs(np.linalg.eigvals(params.rho[:, None] * weights.values))))
    smin = float(singular_values[-1])
    return SystemDiagnostics(
        min_singular_value=smin,
        spectral_radius=radius,
        ok=smin > MIN_SINGULAR_VALUE,
    )
