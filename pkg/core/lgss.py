"""
Linear-Gaussian state-space model

Kalman filter (Joseph-form update), Rauch-Tung-Striebel smoother,
backward trajectory sampling and a dense joint-Gaussian oracle used to
cross-check the recursions.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy import linalg

from config.settings import settings
from utils.exceptions import DimensionMismatchError, SingularMatrixError, SizeGuardError
from utils.logger import setup_logger
from utils.numerics import (
    cho_logdet,
    cholesky_with_jitter,
    draw_gaussian,
    is_psd,
    symmetrize,
)

logger = setup_logger(__name__)

_LOG_2PI = float(np.log(2.0 * np.pi))

SeedLike = Union[int, np.random.Generator, None]


@dataclass(frozen=True, eq=False)
class GaussianMoments:
    """Mean vector and covariance matrix of a Gaussian"""
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise DimensionMismatchError(
                f"covariance shape {cov.shape} does not match mean of length {mean.shape[0]}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def is_valid(self, sym_tol: float = 1e-12, psd_tol: float = 1e-10) -> bool:
        """Symmetric within sym_tol (relative) and PSD within psd_tol (relative)."""
        scale = max(np.max(np.abs(self.cov)), np.finfo(float).tiny)
        if np.max(np.abs(self.cov - self.cov.T)) > sym_tol * scale:
            return False
        return is_psd(self.cov, psd_tol)


@dataclass(frozen=True, eq=False)
class LgssModel:
    """
    x_1 ~ N(m_1, P_1)
    x_{k+1} = M_k x_k + b_k + w_k,   w_k ~ N(0, Q_k)
    y_k     = A_k x_k + y0_k + v_k,  v_k ~ N(0, R_k)

    Per-stage arrays are stacked along the first axis: K_f entries for the
    observation part, K_f - 1 for the transitions.
    """
    init: GaussianMoments
    obs_matrices: np.ndarray
    obs_offsets: np.ndarray
    obs_noise_covs: np.ndarray
    trans_matrices: np.ndarray
    trans_offsets: np.ndarray
    trans_noise_covs: np.ndarray

    def __post_init__(self):
        for name in ("obs_matrices", "obs_offsets", "obs_noise_covs",
                     "trans_matrices", "trans_offsets", "trans_noise_covs"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

        n = self.init.dim
        k_f = self.obs_matrices.shape[0] if self.obs_matrices.ndim == 3 else 0
        if k_f < 1:
            raise DimensionMismatchError("obs_matrices must have shape (K_f, obs_dim, state_dim) with K_f >= 1")
        p = self.obs_matrices.shape[1]

        expected = {
            "obs_matrices": (k_f, p, n),
            "obs_offsets": (k_f, p),
            "obs_noise_covs": (k_f, p, p),
            "trans_matrices": (k_f - 1, n, n),
            "trans_offsets": (k_f - 1, n),
            "trans_noise_covs": (k_f - 1, n, n),
        }
        for name, shape in expected.items():
            value = getattr(self, name)
            if value.size == 0 and k_f == 1 and name.startswith("trans"):
                object.__setattr__(self, name, value.reshape(shape))
                continue
            if value.shape != shape:
                raise DimensionMismatchError(f"{name} has shape {value.shape}, expected {shape}")

    @property
    def num_stages(self) -> int:
        return self.obs_matrices.shape[0]

    @property
    def state_dim(self) -> int:
        return self.init.dim

    @property
    def obs_dim(self) -> int:
        return self.obs_matrices.shape[1]

    def check_observations(self, observations) -> np.ndarray:
        y = np.asarray(observations, dtype=float)
        if y.ndim != 2 or y.shape != (self.num_stages, self.obs_dim):
            raise DimensionMismatchError(
                f"observations shape {y.shape}, expected ({self.num_stages}, {self.obs_dim})"
            )
        return y


@dataclass
class FilterOutput:
    predicted: List[GaussianMoments] = field(default_factory=list)
    filtered: List[GaussianMoments] = field(default_factory=list)
    log_increments: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def log_likelihood(self) -> float:
        """log p(y) = sum_k log J_k"""
        return float(np.sum(self.log_increments))


@dataclass
class SmootherOutput:
    smoothed: List[GaussianMoments] = field(default_factory=list)

    @property
    def means(self) -> np.ndarray:
        """(K_f, state_dim)"""
        return np.stack([s.mean for s in self.smoothed])

    @property
    def covs(self) -> np.ndarray:
        """(K_f, state_dim, state_dim)"""
        return np.stack([s.cov for s in self.smoothed])


@dataclass
class OracleOutput:
    smoothed: List[GaussianMoments]
    log_density: float


def _predict(model: LgssModel, k: int, previous: GaussianMoments) -> GaussianMoments:
    """Propagate filtered moments of stage k-1 to stage k."""
    M = model.trans_matrices[k - 1]
    mean = M @ previous.mean + model.trans_offsets[k - 1]
    cov = symmetrize(M @ previous.cov @ M.T + model.trans_noise_covs[k - 1])
    return GaussianMoments(mean, cov)


def kalman_filter(model: LgssModel, observations) -> FilterOutput:
    """
    Forward Kalman filter with per-stage marginal-likelihood increments.

    log_increments[k] = log N(y_k; A_k m_pred + y0_k, A_k P_pred A_k^T + R_k)
    """
    y = model.check_observations(observations)
    n = model.state_dim
    p = model.obs_dim
    eye = np.eye(n)

    out = FilterOutput(log_increments=np.empty(model.num_stages))
    for k in range(model.num_stages):
        pred = model.init if k == 0 else _predict(model, k, out.filtered[-1])

        A = model.obs_matrices[k]
        R = model.obs_noise_covs[k]
        innovation = y[k] - (A @ pred.mean + model.obs_offsets[k])
        S = symmetrize(A @ pred.cov @ A.T + R)

        factor, jittered = cholesky_with_jitter(S, stage=k, what="innovation covariance")
        if jittered:
            logger.debug(f"stage {k}: innovation covariance needed jitter")
        if np.linalg.cond(S) > settings.CONDITION_LIMIT:
            raise SingularMatrixError("innovation covariance is numerically singular", stage=k)

        # K^T = S^{-1} A P
        gain = linalg.cho_solve(factor, A @ pred.cov, check_finite=False).T
        mean = pred.mean + gain @ innovation
        I_KA = eye - gain @ A
        cov = symmetrize(I_KA @ pred.cov @ I_KA.T + gain @ R @ gain.T)

        whitened = linalg.cho_solve(factor, innovation, check_finite=False)
        out.log_increments[k] = -0.5 * (p * _LOG_2PI + cho_logdet(factor) + innovation @ whitened)
        out.predicted.append(pred)
        out.filtered.append(GaussianMoments(mean, cov))

    return out


def _backward_gain(model: LgssModel, filter_out: FilterOutput, k: int):
    """G_k = P_f,k M_k^T P_pred,k+1^{-1}"""
    filt = filter_out.filtered[k]
    pred_next = filter_out.predicted[k + 1]
    M = model.trans_matrices[k]
    factor, _ = cholesky_with_jitter(pred_next.cov, stage=k + 1, what="predicted covariance")
    return linalg.cho_solve(factor, M @ filt.cov, check_finite=False).T


def kalman_smoother(model: LgssModel, filter_out: FilterOutput) -> SmootherOutput:
    """Fixed-interval Rauch-Tung-Striebel smoother."""
    num_stages = model.num_stages
    if len(filter_out.filtered) != num_stages:
        raise DimensionMismatchError("filter output does not come from this model")

    smoothed: List[Optional[GaussianMoments]] = [None] * num_stages
    smoothed[-1] = filter_out.filtered[-1]
    for k in range(num_stages - 2, -1, -1):
        filt = filter_out.filtered[k]
        pred_next = filter_out.predicted[k + 1]
        G = _backward_gain(model, filter_out, k)
        mean = filt.mean + G @ (smoothed[k + 1].mean - pred_next.mean)
        cov = symmetrize(filt.cov + G @ (smoothed[k + 1].cov - pred_next.cov) @ G.T)
        smoothed[k] = GaussianMoments(mean, cov)

    return SmootherOutput(smoothed=smoothed)


def sample_conditional_trajectory(
    model: LgssModel,
    observations,
    seed: SeedLike = None,
    filter_out: Optional[FilterOutput] = None,
) -> np.ndarray:
    """
    One draw of (x_1..x_K) from p(x | y) by forward filtering, backward sampling.

    Returns:
        array (K_f, state_dim)
    """
    rng = np.random.default_rng(seed)
    if filter_out is None:
        filter_out = kalman_filter(model, observations)

    num_stages = model.num_stages
    path = np.empty((num_stages, model.state_dim))
    last = filter_out.filtered[-1]
    path[-1] = draw_gaussian(rng, last.mean, last.cov)
    for k in range(num_stages - 2, -1, -1):
        filt = filter_out.filtered[k]
        pred_next = filter_out.predicted[k + 1]
        G = _backward_gain(model, filter_out, k)
        mean = filt.mean + G @ (path[k + 1] - pred_next.mean)
        cov = symmetrize(filt.cov - G @ pred_next.cov @ G.T)
        path[k] = draw_gaussian(rng, mean, cov)
    return path


def joint_gaussian_oracle(model: LgssModel, observations) -> OracleOutput:
    """
    Dense construction of the joint Gaussian over (x_1..x_K, y_1..y_K),
    conditioned on y by block formulas. Test oracle only.
    """
    y = model.check_observations(observations)
    num_stages, n, p = model.num_stages, model.state_dim, model.obs_dim
    if num_stages * n > settings.ORACLE_MAX_DIM:
        raise SizeGuardError(f"K_f * state_dim = {num_stages * n} exceeds {settings.ORACLE_MAX_DIM}")

    mu_x = np.empty((num_stages, n))
    cov_x = np.zeros((num_stages * n, num_stages * n))
    mu_x[0] = model.init.mean
    cov_x[:n, :n] = model.init.cov
    for k in range(1, num_stages):
        M = model.trans_matrices[k - 1]
        mu_x[k] = M @ mu_x[k - 1] + model.trans_offsets[k - 1]
        rows = slice(k * n, (k + 1) * n)
        prev = slice((k - 1) * n, k * n)
        # Cov(x_k, x_j) = M_{k-1} Cov(x_{k-1}, x_j) for j < k
        cov_x[rows, :k * n] = M @ cov_x[prev, :k * n]
        cov_x[:k * n, rows] = cov_x[rows, :k * n].T
        cov_x[rows, rows] = M @ cov_x[prev, prev] @ M.T + model.trans_noise_covs[k - 1]

    A_big = linalg.block_diag(*model.obs_matrices)
    R_big = linalg.block_diag(*model.obs_noise_covs)
    mu_y = A_big @ mu_x.reshape(-1) + model.obs_offsets.reshape(-1)
    cov_xy = cov_x @ A_big.T
    cov_yy = symmetrize(A_big @ cov_xy + R_big)

    factor = linalg.cho_factor(cov_yy, lower=True)
    resid = y.reshape(-1) - mu_y
    cond_mean = mu_x.reshape(-1) + cov_xy @ linalg.cho_solve(factor, resid)
    cond_cov = symmetrize(cov_x - cov_xy @ linalg.cho_solve(factor, cov_xy.T))
    log_density = -0.5 * (resid.size * _LOG_2PI + cho_logdet(factor) + resid @ linalg.cho_solve(factor, resid))

    smoothed = [
        GaussianMoments(cond_mean[k * n:(k + 1) * n], cond_cov[k * n:(k + 1) * n, k * n:(k + 1) * n])
        for k in range(num_stages)
    ]
    return OracleOutput(smoothed=smoothed, log_density=log_density)
