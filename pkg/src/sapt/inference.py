"""Asymptotic covariance objects for joint inference on the ridge estimators.

The limiting law of the stacked-system estimator for unit i is

    sqrt(T) V_i (beta_hat_i - beta_i)  ->  N(0, X_i' U_i X_i)

where V_i = X_i'X_i is the population Gram matrix of the stacked design and
U_i is the long-run covariance of the stacked product process
z_t = (f_t eps_{i,t}; f_{t-1} eps_{i,t}).  All blocks are estimable: the
design from lagged sample covariances, U_i by kernel-truncated sums of the
sample product moments.  With latent factors every object acquires a K x K
rotation H; the rotated displays are assembled by
:func:`latent_unit_asymptotics`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import SaptParams, SpatialWeights, system_matrix
from .exceptions import NumericError, ValidationError
from .moments import LagCovariances

_KERNELS = ("bartlett", "truncated")


@dataclass(frozen=True)
class LongRunFEps:
    """Long-run covariance blocks of the factor-times-residual processes.

    ``sigma_fe_0`` and ``omega_fe_0`` are the long-run variances of
    u_t = f_t eps_t and v_t = f_{t-1} eps_t; ``sigma_fe_1`` the long-run
    cross term between them.
    """

    sigma_fe_0: np.ndarray
    sigma_fe_1: np.ndarray
    omega_fe_0: np.ndarray
    bandwidth: int
    kernel: str

    def __post_init__(self):
        for name in ("sigma_fe_0", "sigma_fe_1", "omega_fe_0"):
            arr = np.asarray(getattr(self, name), float).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def stacked(self) -> np.ndarray:
        """The 2K x 2K matrix U_i assembled from the three blocks."""
        return np.block([
            [self.sigma_fe_0, self.sigma_fe_1],
            [self.sigma_fe_1.T, self.omega_fe_0],
        ])


@dataclass(frozen=True)
class UnitInference:
    """Per-unit inference ingredients: V_i = X_i'X_i and X_i'U_iX_i."""

    unit_index: int
    v_matrix: np.ndarray
    xux: np.ndarray

    def __post_init__(self):
        for name in ("v_matrix", "xux"):
            arr = np.asarray(getattr(self, name), float).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def default_bandwidth(t: int) -> int:
    """Newey-West style rule: floor(4 (T/100)^{2/9})."""
    return int(np.floor(4.0 * (t / 100.0) ** (2.0 / 9.0)))


def _kernel_weight(kernel: str, j: int, bandwidth: int) -> float:
    if kernel == "bartlett":
        return 1.0 - j / (bandwidth + 1.0)
    return 1.0


def longrun_fe(factors, residual, bandwidth: int | None = None,
               kernel: str = "bartlett") -> LongRunFEps:
    """Kernel-truncated long-run covariances of f_t eps_t and f_{t-1} eps_t.

    All sums are divided by T, the panel length.  ``bandwidth`` 0 keeps only
    the contemporaneous terms, which is exact when the noise is i.i.d. and
    independent of the factors.
    """
    f = np.asarray(factors, float)
    eps = np.asarray(residual, float).ravel()
    t = f.shape[0]
    if eps.shape[0] != t:
        raise ValidationError(f"factors have T={t} but residuals have T={eps.shape[0]}")
    if kernel not in _KERNELS:
        raise ValidationError(f"kernel must be one of {_KERNELS}, got {kernel!r}")
    if bandwidth is None:
        bandwidth = default_bandwidth(t)
    bandwidth = int(bandwidth)
    if bandwidth < 0 or bandwidth >= t:
        raise ValidationError(f"bandwidth must lie in [0, T), got {bandwidth}")

    u = f * eps[:, None]            # u_t = f_t eps_t,     rows t = 1..T
    v = f[:-1] * eps[1:, None]      # v_t = f_{t-1} eps_t, rows t = 2..T

    sigma0 = u.T @ u / t
    omega0 = v.T @ v / t
    sigma1 = u[1:].T @ v / t        # sum_{t=2..T} u_t v_t'
    for j in range(1, bandwidth + 1):
        w = _kernel_weight(kernel, j, bandwidth)
        m_u = u[j:].T @ u[:-j] / t
        sigma0 += w * (m_u + m_u.T)
        if v.shape[0] > j:
            m_v = v[j:].T @ v[:-j] / t
            omega0 += w * (m_v + m_v.T)
        # sum u_{t+j} v_t' over t=2..T-j, plus sum u_t v_{t+j}' over t=1..T-j
        lead = u[j + 1:].T @ v[: t - 1 - j] / t
        lag = u[: t - j].T @ v[j - 1:] / t
        sigma1 += w * (lead + lag)
    return LongRunFEps(sigma_fe_0=sigma0, sigma_fe_1=sigma1, omega_fe_0=omega0,
                       bandwidth=bandwidth, kernel=kernel)


def _design_parts(i: int, covs: LagCovariances, weights: SpatialWeights):
    for lag in (0, 1):
        if lag not in covs.sigma_yf or lag not in covs.sigma_f:
            raise ValidationError(f"covariances missing lag {lag}")
    w_i = weights.values[i]
    a0 = covs.sigma_yf[0].T @ w_i
    a1 = covs.sigma_yf[1].T @ w_i
    return a0, a1, covs.sigma_f[0], covs.sigma_f[1]


def unit_asymptotics(i: int, covs: LagCovariances, weights: SpatialWeights,
                     longrun: LongRunFEps) -> UnitInference:
    """Assemble V_i and X_i'U_iX_i for the observed-factor estimator."""
    a0, a1, s0, s1 = _design_parts(i, covs, weights)
    design = np.column_stack([np.concatenate([a0, a1]), np.vstack([s0, s1.T])])
    v = design.T @ design
    xux = design.T @ longrun.stacked() @ design
    return UnitInference(unit_index=int(i), v_matrix=v, xux=xux)


def latent_unit_asymptotics(i: int, covs: LagCovariances, weights: SpatialWeights,
                            longrun: LongRunFEps, rotation: np.ndarray) -> UnitInference:
    """Assemble the rotated objects V_i^H and X_i^H' U_i^H X_i^H.

    ``rotation`` plays the role of H: the factor-rotation limit.  In
    simulations pass the computable rotation (estimated-on-true loadings);
    on real data pass the identity and read the results as inference on the
    rotated parameters.  With orthonormal H the displayed blocks coincide
    with the direct congruence X_i^H' U_i^H X_i^H.
    """
    h = np.asarray(rotation, float)
    a0, a1, s0, s1 = _design_parts(i, covs, weights)
    k = s0.shape[0]
    if h.shape != (k, k):
        raise ValidationError(f"rotation must be {k} x {k}, got {h.shape}")
    g0, g1, om0 = longrun.sigma_fe_0, longrun.sigma_fe_1, longrun.omega_fe_0

    v11 = a0 @ a0 + a1 @ a1
    v_cross = h @ (s0 @ a0 + s1 @ a1)
    v22 = h @ (s0 @ s0 + s1 @ s1.T) @ h.T
    v = np.empty((k + 1, k + 1))
    v[0, 0] = v11
    v[0, 1:] = v_cross
    v[1:, 0] = v_cross
    v[1:, 1:] = v22

    x11 = a0 @ g0 @ a0 + a0 @ g1 @ a1 + a1 @ g1.T @ a0 + a1 @ om0 @ a1
    x12 = (a0 @ g0 @ s0 + a0 @ g1 @ s1.T + a1 @ g1.T @ s0 + a1 @ om0 @ s1.T) @ h.T
    x22 = h @ (s0 @ g0 @ s0 + s0 @ g1 @ s1.T + s1 @ g1.T @ s0 + s1 @ om0 @ s1.T) @ h.T
    xux = np.empty((k + 1, k + 1))
    xux[0, 0] = x11
    xux[0, 1:] = x12
    xux[1:, 0] = x12
    xux[1:, 1:] = x22
    return UnitInference(unit_index=int(i), v_matrix=v, xux=xux)


def rotation_KNT(estimated_loadings, true_loadings) -> np.ndarray:
    """Factor rotation linking estimated to true loadings: est' true / N."""
    est = np.asarray(estimated_loadings, float)
    true = np.asarray(true_loadings, float)
    if est.shape != true.shape:
        raise ValidationError(
            f"loading matrices must share a shape, got {est.shape} and {true.shape}"
        )
    return est.T @ true / est.shape[0]


def factor_asy_cov(loadings, params: SaptParams, weights: SpatialWeights,
                   noise_cov, rotation=None) -> np.ndarray:
    """Per-time covariance of the recovered-factor errors (simulation use).

    Computes P = loadings' (I - D(rho)W)^{-1} and Gamma = P noise_cov P' / N.
    When ``rotation`` is given, returns the plug-in covariance
    rotation @ Gamma @ rotation' for sqrt(N) (f_hat_t - rotation f_t).
    """
    lam = np.asarray(loadings, float)
    noise_cov = np.asarray(noise_cov, float)
    s = system_matrix(params, weights)
    smin = np.linalg.svd(s, compute_uv=False)[-1]
    if smin <= 1e-10:
        raise NumericError(f"I - D(rho)W is numerically singular (min sv {smin:.3e})")
    p = np.linalg.solve(s.T, lam).T       # loadings' S^{-1}
    gamma = p @ noise_cov @ p.T / lam.shape[0]
    if rotation is None:
        return gamma
    rotation = np.asarray(rotation, float)
    return rotation @ gamma @ rotation.T


def standardized_stat(info: UnitInference, beta_hat, beta_true, t: int) -> np.ndarray:
    """sqrt(T) V_i (beta_hat - beta_true); the quantity with a Gaussian limit."""
    return np.sqrt(t) * info.v_matrix @ (np.asarray(beta_hat, float) -
                                         np.asarray(beta_true, float))


def wald_intervals(info: UnitInference, beta_hat, t: int, level: float = 0.05) -> np.ndarray:
    """Plug-in Wald intervals for the (possibly rotated) coefficients.

    Maps the limiting covariance back through V_i^{-1}; this extrapolates
    beyond the weighted statistics the theory strictly covers and is meant
    for applied reporting.  Returns an array of (lower, upper) rows.
    """
    beta_hat = np.asarray(beta_hat, float)
    try:
        v_inv = np.linalg.inv(info.v_matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericError("V_i is numerically singular; intervals unavailable") from exc
    cov = v_inv @ info.xux @ v_inv / t
    half = stats.norm.ppf(1.0 - level / 2.0) * np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return np.column_stack([beta_hat - half, beta_hat + half])
