"""Interval estimation and the global curve-difference test.

All operations consume a converged variational fit. The global test exploits
the fixed point of the coordinate ascent: the fitted lag curves are exact
linear smoothers of the outcome vector, gamma_hat_j(t) = c_j(t)'Y, so the
squared-difference statistic G = Y'SY has a Satterthwaite-matched scaled
chi-squared null.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import (
    BLOCK_GAMMA,
    BLOCK_GAMMA0,
    BLOCK_GAMMA1,
    BLOCK_RANDOM,
    CROSSOVER,
    DesignMatrices,
)
from .special import chi2_sf, normal_quantile
from .vb import NumericalError, VariationalFit


class DegenerateSmootherError(NumericalError):
    """The smoother produced a non-positive null mean or variance."""


@dataclass(frozen=True)
class DifferenceCurve:
    """Treatment-minus-control lag curve with its point-wise standard errors."""

    delta_hat: np.ndarray
    sd: np.ndarray
    gamma0_hat: np.ndarray
    gamma1_hat: np.ndarray

    @property
    def estimate(self) -> np.ndarray:
        return self.delta_hat


@dataclass(frozen=True)
class CurveEstimate:
    """A single fitted lag curve (longitudinal design) with standard errors."""

    gamma_hat: np.ndarray
    sd: np.ndarray

    @property
    def estimate(self) -> np.ndarray:
        return self.gamma_hat


@dataclass(frozen=True)
class Band:
    lower: np.ndarray
    upper: np.ndarray
    m_crit: float
    covariance_clipped: bool


@dataclass(frozen=True)
class ZlsResult:
    """Global test of a zero difference curve across all lags.

    Satterthwaite matching gives kappa = psi / (2 e) and nu = 2 e^2 / psi;
    the p-value is the upper chi-squared tail of G / kappa at nu degrees of
    freedom.
    """

    G: float
    e: float
    psi: float
    kappa: float
    nu: float
    p_value: float


def _require_crossover(fit: VariationalFit, what: str) -> None:
    if fit.config.design != CROSSOVER:
        raise ValueError(f"{what} is defined only for crossover fits")


def difference_curve(fit: VariationalFit, theta: np.ndarray) -> DifferenceCurve:
    """Project the two treatment-specific coefficient blocks into data space
    and form the difference curve with its per-lag standard deviation.

    Var[delta(t)] combines both curve variances and their cross-covariance,
    all read from the corresponding blocks of the joint Gaussian density.
    """
    _require_crossover(fit, "the difference curve")
    gamma0 = theta @ fit.block_mean(BLOCK_GAMMA0)
    gamma1 = theta @ fit.block_mean(BLOCK_GAMMA1)
    joint = fit.block_cov(BLOCK_GAMMA0, BLOCK_GAMMA1)
    contrast = np.hstack([-theta, theta])  # delta = gamma1 - gamma0
    var = np.einsum("ij,jk,ik->i", contrast, joint, contrast)
    sd = np.sqrt(np.maximum(var, 0.0))
    return DifferenceCurve(
        delta_hat=gamma1 - gamma0, sd=sd, gamma0_hat=gamma0, gamma1_hat=gamma1
    )


def gamma_curve(fit: VariationalFit, theta: np.ndarray) -> CurveEstimate:
    """Fitted lag curve and standard errors for a longitudinal fit."""
    if BLOCK_GAMMA not in fit.block_index:
        raise ValueError("gamma_curve needs a longitudinal fit with a single lag curve")
    gamma = theta @ fit.block_mean(BLOCK_GAMMA)
    cov = fit.block_cov(BLOCK_GAMMA)
    var = np.einsum("ij,jk,ik->i", theta, cov, theta)
    return CurveEstimate(gamma_hat=gamma, sd=np.sqrt(np.maximum(var, 0.0)))


def pointwise_interval(
    curve: DifferenceCurve | CurveEstimate, alpha: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-lag Gaussian interval, estimate +/- z_{1 - alpha/2} * sd."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    z = normal_quantile(1.0 - 0.5 * alpha)
    return curve.estimate - z * curve.sd, curve.estimate + z * curve.sd


def _sample_max_ratio(
    cov: np.ndarray,
    projector: np.ndarray,
    sd: np.ndarray,
    n_draws: int,
    rng_seed: int | None,
) -> tuple[np.ndarray, bool]:
    """Draw coefficient errors, project to data space, return per-draw
    max_t |error(t)| / sd(t). Non-PD covariances are eigenvalue-clipped."""
    clipped = False
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        clipped = True
        eigval, eigvec = np.linalg.eigh(cov)
        factor = eigvec * np.sqrt(np.clip(eigval, 1e-12, None))
    rng = np.random.default_rng(rng_seed)
    draws = rng.standard_normal((n_draws, cov.shape[0])) @ factor.T
    errors = draws @ projector.T
    ratios = np.divide(
        np.abs(errors),
        sd,
        out=np.zeros_like(errors),
        where=sd > 0.0,
    )
    return ratios.max(axis=1), clipped


def simultaneous_band(
    fit: VariationalFit,
    curve: DifferenceCurve,
    theta: np.ndarray,
    alpha: float,
    n_draws: int = 10000,
    rng_seed: int | None = None,
) -> Band:
    """Simultaneous band for the difference curve.

    The critical multiplier is the empirical (1 - alpha) quantile of the
    Monte-Carlo sup-statistic max_t |delta_err(t)| / sd(t), floored at the
    Gaussian point-wise quantile so the band always contains the point-wise
    interval.
    """
    _require_crossover(fit, "the simultaneous band")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    joint = fit.block_cov(BLOCK_GAMMA0, BLOCK_GAMMA1)
    # projector maps stacked (gamma0, gamma1) coefficient errors to delta errors
    projector = np.hstack([-theta, theta])
    stats, clipped = _sample_max_ratio(joint, projector, curve.sd, n_draws, rng_seed)
    m_crit = float(np.quantile(stats, 1.0 - alpha))
    m_crit = max(m_crit, normal_quantile(1.0 - 0.5 * alpha))
    return Band(
        lower=curve.delta_hat - m_crit * curve.sd,
        upper=curve.delta_hat + m_crit * curve.sd,
        m_crit=m_crit,
        covariance_clipped=clipped,
    )


def gamma_band(
    fit: VariationalFit,
    curve: CurveEstimate,
    theta: np.ndarray,
    alpha: float,
    n_draws: int = 10000,
    rng_seed: int | None = None,
) -> Band:
    """Simultaneous band for a single longitudinal lag curve."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    cov = fit.block_cov(BLOCK_GAMMA)
    stats, clipped = _sample_max_ratio(cov, theta, curve.sd, n_draws, rng_seed)
    m_crit = float(np.quantile(stats, 1.0 - alpha))
    m_crit = max(m_crit, normal_quantile(1.0 - 0.5 * alpha))
    return Band(
        lower=curve.gamma_hat - m_crit * curve.sd,
        upper=curve.gamma_hat + m_crit * curve.sd,
        m_crit=m_crit,
        covariance_clipped=clipped,
    )


def lag_smoothers(
    fit: VariationalFit, dm: DesignMatrices, theta: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """The (num_lags x N) linear smoothers mapping Y to each fitted curve.

    Row t of the j-th matrix is c_j(t)'. At the converged fixed point these
    reproduce the fitted curves exactly: c_j(t)'Y = gamma_hat_j(t).
    """
    _require_crossover(fit, "the lag smoother pair")
    n = dm.n_rows
    e_prec = (fit.config.a_e + 0.5 * n) / fit.B_sigma2
    out = []
    for block in (BLOCK_GAMMA0, BLOCK_GAMMA1):
        rows = fit.block_index[block]
        # full Sigma rows for the block: cross-covariance with every other
        # coefficient is what makes the fixed point exact
        sigma_rows = fit.Sigma[rows.start : rows.stop, :]
        out.append(theta @ (e_prec * (sigma_rows @ dm.C.T)))
    return out[0], out[1]


def null_covariance(fit: VariationalFit, dm: DesignMatrices) -> np.ndarray:
    """Model-based covariance of Y under the no-difference null.

    V = sigma2_hat * I + Z G_hat Z' with the converged inverse-gamma means
    plugged in for the noise and random-effect variances.
    """
    n = dm.n_rows
    a_e = fit.config.a_e
    denom = a_e + 0.5 * n - 1.0
    if denom <= 0.0:
        raise NumericalError("noise inverse-gamma mean undefined (shape <= 1)")
    sigma2_hat = fit.B_sigma2 / denom

    name, penalty = next(pb for pb in dm.penalty_blocks if pb[0] == BLOCK_RANDOM)
    a_r, _ = fit.config.hyperparameters(name)
    k_r = penalty.shape[0]
    denom_r = a_r + 0.5 * k_r - 1.0
    if denom_r <= 0.0:
        raise NumericalError("random-effect inverse-gamma mean undefined (shape <= 1)")
    scale_r = fit.B[BLOCK_RANDOM] / denom_r

    z = dm.columns(BLOCK_RANDOM)
    g_hat = scale_r * np.linalg.inv(penalty)
    return sigma2_hat * np.eye(n) + z @ g_hat @ z.T


def zls_test(fit: VariationalFit, dm: DesignMatrices, theta: np.ndarray) -> ZlsResult:
    """Global chi-squared test of a zero difference curve at every lag.

    G = Y'SY with S summed over the per-lag difference smoothers; the null
    moments e = tr(SV) and psi = 2 tr((SV)^2) match a scaled chi-squared.
    """
    _require_crossover(fit, "the global difference test")
    smooth0, smooth1 = lag_smoothers(fit, dm, theta)
    diff = smooth1 - smooth0
    g_stat = float(np.sum((diff @ dm.Y) ** 2))

    s_mat = diff.T @ diff
    v_mat = null_covariance(fit, dm)
    sv = s_mat @ v_mat
    e = float(np.trace(sv))
    psi = 2.0 * float(np.sum(sv * sv.T))
    if e <= 0.0 or psi <= 0.0:
        raise DegenerateSmootherError(
            f"degenerate smoother: e = {e:.3e}, psi = {psi:.3e}"
        )
    kappa = psi / (2.0 * e)
    nu = 2.0 * e * e / psi
    p_value = chi2_sf(g_stat / kappa, nu)
    return ZlsResult(G=g_stat, e=e, psi=psi, kappa=kappa, nu=nu, p_value=p_value)
