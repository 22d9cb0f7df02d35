"""Spatial weight matrix constructions: distance, correlation, banded, radius.

All builders return row-normalized :class:`~sapt.data.SpatialWeights` with a
zero diagonal.  Units without any neighbor are rejected rather than left
with an unnormalizable row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SpatialWeights
from .exceptions import ValidationError

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class GeoLocations:
    """Point coordinates in degrees, one row per unit."""

    ids: tuple[str, ...]
    lat: np.ndarray
    lon: np.ndarray

    def __post_init__(self):
        lat = np.asarray(self.lat, float).copy()
        lon = np.asarray(self.lon, float).copy()
        ids = tuple(str(x) for x in self.ids)
        if lat.shape != lon.shape or lat.ndim != 1:
            raise ValidationError("lat and lon must be equal-length vectors")
        if len(ids) != lat.shape[0]:
            raise ValidationError(f"expected {lat.shape[0]} ids, got {len(ids)}")
        if np.any(np.abs(lat) > 90.0):
            bad = int(np.argmax(np.abs(lat) > 90.0))
            raise ValidationError(f"latitude out of range for {ids[bad]!r}: {lat[bad]}")
        if np.any(np.abs(lon) > 180.0):
            bad = int(np.argmax(np.abs(lon) > 180.0))
            raise ValidationError(f"longitude out of range for {ids[bad]!r}: {lon[bad]}")
        lat.flags.writeable = False
        lon.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)

    @property
    def n_points(self) -> int:
        return self.lat.shape[0]


def _check_distances(distances) -> np.ndarray:
    d = np.asarray(distances, float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValidationError(f"distance matrix must be square, got shape {d.shape}")
    if np.any(np.diag(d) != 0.0):
        raise ValidationError("distance matrix diagonal must be zero")
    return d


def weights_from_distance(distances) -> SpatialWeights:
    """Inverse-distance weights w_ij = (s_i d_ij)^{-1}, s_i = sum_j d_ij^{-1}."""
    d = _check_distances(distances)
    n = d.shape[0]
    off = ~np.eye(n, dtype=bool)
    if np.any(d[off] <= 0.0):
        i, j = map(int, np.argwhere(off & (d <= 0.0))[0])
        raise ValidationError(f"off-diagonal distance d[{i},{j}]={d[i, j]} must be positive")
    inv = np.zeros_like(d)
    inv[off] = 1.0 / d[off]
    w = inv / inv.sum(axis=1, keepdims=True)
    return SpatialWeights(w, row_normalized=True)


def haversine_matrix(locations: GeoLocations, radius_km: float = EARTH_RADIUS_KM) -> np.ndarray:
    """Great-circle distance matrix in kilometers; symmetric, zero diagonal."""
    lat = np.radians(locations.lat)
    lon = np.radians(locations.lon)
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * \
        np.sin(dlon / 2.0) ** 2
    d = 2.0 * radius_km * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    np.fill_diagonal(d, 0.0)
    coincident = (d == 0.0) & ~np.eye(locations.n_points, dtype=bool)
    if np.any(coincident):
        i, j = map(int, np.argwhere(coincident)[0])
        raise ValidationError(
            f"coincident locations {locations.ids[i]!r} and {locations.ids[j]!r} "
            "produce a zero distance"
        )
    return d


def weights_from_correlation(panel) -> SpatialWeights:
    """Economic-distance weights with d_ij^{-1} set to the sample correlation.

    Requires positive variance in every column and strictly positive pairwise
    correlations; the inverse-distance recipe is undefined otherwise.
    """
    y = panel.values
    ids = panel.unit_ids
    stds = y.std(axis=0)
    if np.any(stds == 0.0):
        bad = int(np.argmax(stds == 0.0))
        raise ValidationError(f"unit {ids[bad]!r} has zero variance")
    corr = np.corrcoef(y.T)
    n = corr.shape[0]
    off = ~np.eye(n, dtype=bool)
    if np.any(corr[off] <= 0.0):
        i, j = map(int, np.argwhere(off & (corr <= 0.0))[0])
        raise ValidationError(
            f"correlation between {ids[i]!r} and {ids[j]!r} is {corr[i, j]:.4f}; "
            "the inverse-distance recipe needs positive correlations"
        )
    inv = np.where(off, corr, 0.0)
    w = inv / inv.sum(axis=1, keepdims=True)
    return SpatialWeights(w, row_normalized=True)


def weights_banded(n: int, q: int) -> SpatialWeights:
    """Banded neighbor weights: the q nearest indices per side, row-normalized."""
    n, q = int(n), int(q)
    if not 1 <= q <= n - 1:
        raise ValidationError(f"q must lie in [1, N-1], got q={q}, N={n}")
    idx = np.arange(n)
    band = (np.abs(idx[:, None] - idx[None, :]) >= 1) & \
           (np.abs(idx[:, None] - idx[None, :]) <= q)
    w = band / band.sum(axis=1, keepdims=True)
    return SpatialWeights(w, row_normalized=True)


def weights_radius(distances, threshold: float) -> SpatialWeights:
    """Indicator weights: units within ``threshold`` are neighbors, row-normalized."""
    d = _check_distances(distances)
    n = d.shape[0]
    neighbor = (d <= float(threshold)) & ~np.eye(n, dtype=bool)
    counts = neighbor.sum(axis=1)
    if np.any(counts == 0):
        bad = int(np.argmax(counts == 0))
        raise ValidationError(
            f"unit {bad} has no neighbor within distance {threshold}; "
            "increase the threshold"
        )
    w = neighbor / counts[:, None]
    return SpatialWeights(w, row_normalized=True)
