"""
Rao-Blackwellized posterior estimators

For every particle rho^(i) the Kalman smoother gives x_k(rho) and Sigma_k(rho).
The posterior moments of x_k follow by conditioning:

    xhat_k    = mean_i x_k(rho^(i))
    Sigma_k   = mean_i Sigma_k(rho^(i)) + cov_i x_k(rho^(i))
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from core.lgss import SeedLike, SmootherOutput, kalman_filter, kalman_smoother, sample_conditional_trajectory
from core.smc import InversionContext, ParticleCloud
from models.schemas import SummaryHeader
from utils.exceptions import ConfigurationError, DimensionMismatchError
from utils.logger import setup_logger
from utils.numerics import symmetrize
from utils.serialization import (
    read_document,
    read_matrices,
    read_matrix_csv,
    write_document,
    write_matrices,
    write_matrix_csv,
)

logger = setup_logger(__name__)


@dataclass(eq=False)
class CovarianceParts:
    """within: mean smoothed covariance, between: spread of the smoothed means (K, n, n each)"""
    within: np.ndarray
    between: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.within + self.between


@dataclass(eq=False)
class PosteriorSummary:
    """
    xhat, sigma_hat: (4N, K_f), rows ordered eps' zones, eps'' zones, mu' zones, mu'' zones.
    covariances: optional (K_f, 4N, 4N).
    """
    xhat: np.ndarray
    sigma_hat: np.ndarray
    particles: np.ndarray
    covariances: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.xhat.shape != self.sigma_hat.shape:
            raise DimensionMismatchError(f"xhat {self.xhat.shape} vs sigma_hat {self.sigma_hat.shape}")
        if np.any(self.sigma_hat < 0):
            raise DimensionMismatchError("sigma_hat must be non-negative")

    @property
    def state_dim(self) -> int:
        return self.xhat.shape[0]

    @property
    def num_stages(self) -> int:
        return self.xhat.shape[1]


def _weights(count: int, weights: Optional[np.ndarray]) -> np.ndarray:
    if count == 0:
        raise DimensionMismatchError("particle cloud is empty")
    if weights is None:
        return np.full(count, 1.0 / count)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (count,) or np.any(weights < 0) or weights.sum() <= 0:
        raise DimensionMismatchError("weights must be non-negative, one per particle")
    return weights / weights.sum()


def rb_mean(smoothed: Sequence[SmootherOutput], weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Posterior mean of every x_k, shape (K_f, 4N)."""
    w = _weights(len(smoothed), weights)
    means = np.stack([s.means for s in smoothed])
    return np.einsum("i,ikn->kn", w, means)


def rb_cov_parts(
    smoothed: Sequence[SmootherOutput],
    xhat: Optional[np.ndarray] = None,
    weights: Optional[np.ndarray] = None,
) -> CovarianceParts:
    w = _weights(len(smoothed), weights)
    if xhat is None:
        xhat = rb_mean(smoothed, w)
    means = np.stack([s.means for s in smoothed])
    covs = np.stack([s.covs for s in smoothed])
    within = np.einsum("i,iknm->knm", w, covs)
    spread = means - xhat[None]
    between = np.einsum("i,ikn,ikm->knm", w, spread, spread)
    return CovarianceParts(
        within=np.stack([symmetrize(c) for c in within]),
        between=np.stack([symmetrize(c) for c in between]),
    )


def rb_cov(
    smoothed: Sequence[SmootherOutput],
    xhat: Optional[np.ndarray] = None,
    weights: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Posterior covariance of every x_k, shape (K_f, 4N, 4N); divisor N_p (or normalized weights)."""
    return rb_cov_parts(smoothed, xhat, weights).total


def smooth_cloud(cloud: ParticleCloud, context: InversionContext) -> List[SmootherOutput]:
    """Smoother outputs of every particle, reusing cached filter outputs."""
    smoothed = []
    for i, rho in enumerate(cloud.particles):
        model = context.model_for(rho)
        filter_out = cloud.filter_outputs[i] if cloud.filter_outputs else None
        if filter_out is None:
            filter_out = kalman_filter(model, context.observations)
        smoothed.append(kalman_smoother(model, filter_out))
    return smoothed


def summarize_posterior(
    cloud: ParticleCloud,
    context: InversionContext,
    retain_covariances: bool = False,
    weights: Optional[np.ndarray] = None,
) -> PosteriorSummary:
    smoothed = smooth_cloud(cloud, context)
    means = rb_mean(smoothed, weights)
    covs = rb_cov(smoothed, means, weights)
    variances = np.clip(np.diagonal(covs, axis1=1, axis2=2), 0.0, None)
    logger.info(f"Posterior summary over {len(smoothed)} particles, {means.shape[0]} stages")
    return PosteriorSummary(
        xhat=means.T.copy(),
        sigma_hat=np.sqrt(variances).T.copy(),
        particles=cloud.particles.copy(),
        covariances=covs if retain_covariances else None,
    )


def posterior_samples(
    cloud: ParticleCloud,
    context: InversionContext,
    count: int,
    seed: SeedLike = None,
    weights: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Trajectories from p(x | y): pick a particle, then draw x given that rho.

    Returns:
        array (count, K_f, 4N)
    """
    if count < 1:
        raise ConfigurationError(f"sample count must be at least 1, got {count}")
    rng = np.random.default_rng(seed)
    n = cloud.n_particles
    w = _weights(n, weights)
    picks = rng.choice(n, size=count, p=w)
    out = np.empty((count, context.num_stages, context.surrogate.state_dim))
    for s, i in enumerate(picks):
        filter_out = cloud.filter_outputs[i] if cloud.filter_outputs else None
        out[s] = sample_conditional_trajectory(
            context.model_for(cloud.particles[i]), context.observations, rng, filter_out=filter_out,
        )
    return out


def save_summary(directory: Path, summary: PosteriorSummary, header: SummaryHeader) -> None:
    """summary.json, xhat.csv, sigma.csv, particles.csv and optionally covariances.{json,bin}."""
    directory = Path(directory)
    header = header.model_copy(update={"has_covariances": summary.covariances is not None})
    write_document(directory / "summary.json", header)
    write_matrix_csv(directory / "xhat.csv", summary.xhat)
    write_matrix_csv(directory / "sigma.csv", summary.sigma_hat)
    write_matrix_csv(directory / "particles.csv", summary.particles)
    if summary.covariances is not None:
        write_matrices(directory, "covariances", {"covariances": summary.covariances})


def load_summary(directory: Path):
    directory = Path(directory)
    header = read_document(directory / "summary.json", SummaryHeader)
    covariances = None
    if header.has_covariances:
        arrays, _ = read_matrices(directory, "covariances")
        covariances = arrays["covariances"]
    summary = PosteriorSummary(
        xhat=read_matrix_csv(directory / "xhat.csv"),
        sigma_hat=read_matrix_csv(directory / "sigma.csv"),
        particles=read_matrix_csv(directory / "particles.csv"),
        covariances=covariances,
    )
    return header, summary
