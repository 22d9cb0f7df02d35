"""Coercion helpers so estimators accept plain arrays or typed containers."""

from __future__ import annotations

import numpy as np

from .data import FactorSet, PanelData, SpatialWeights


def as_panel(y, demeaned: bool = False) -> PanelData:
    """Coerce a (T, N) array to PanelData; typed input passes through."""
    if isinstance(y, PanelData):
        return y
    return PanelData(np.asarray(y, float), demeaned=demeaned)


def as_factors(f, demeaned: bool = False) -> FactorSet:
    """Coerce a (T, K) array to FactorSet; typed input passes through."""
    if isinstance(f, FactorSet):
        return f
    return FactorSet(np.asarray(f, float), demeaned=demeaned)


def as_weights(w) -> SpatialWeights:
    """Coerce an (N, N) array to SpatialWeights, detecting row normalization."""
    if isinstance(w, SpatialWeights):
        return w
    arr = np.asarray(w, float)
    normalized = bool(np.all(np.abs(arr.sum(axis=1) - 1.0) <= 1e-12))
    return SpatialWeights(arr, row_normalized=normalized)
