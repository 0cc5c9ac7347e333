"""
Spatial prior and frequency dynamics

Builds m_k and the block-Toeplitz P_k of the spatial prior, the symmetric
square roots H_k, the correlation matrix D_rho and the transition system
of the generalized autoregressive process

    x_{k+1} = m_{k+1} + D H_{k+1} H_k^{-1} (x_k - m_k) + sqrt(I - D^2) H_{k+1} V_k

whose marginals stay N(m_k, P_k).
"""
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
from scipy import linalg

from config.presets import PROPERTIES
from config.settings import settings
from core.lgss import GaussianMoments
from models.schemas import AreaLayout, PriorSpec
from utils.exceptions import (
    DimensionMismatchError,
    NotPositiveDefiniteError,
    SingularMatrixError,
    SizeGuardError,
)
from utils.numerics import symmetrize


class RhoMode(str, Enum):
    SCALAR = "scalar"
    AREA = "area"
    AREA_PROPERTY = "area_property"


def rho_dimension(mode: Union[RhoMode, str], layout: AreaLayout) -> int:
    mode = RhoMode(mode)
    if mode is RhoMode.SCALAR:
        return 1
    if mode is RhoMode.AREA:
        return layout.num_areas
    return len(PROPERTIES) * layout.num_areas


@dataclass(frozen=True, eq=False)
class CorrelationParam:
    """
    Frequency-correlation hyper-parameter rho in [0, 1]^d.

    area_property ordering: index = property * N_a + area.
    """
    values: np.ndarray
    mode: RhoMode = RhoMode.SCALAR

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if values.ndim != 1:
            raise DimensionMismatchError("rho must be a vector")
        if np.any(values < 0.0) or np.any(values > 1.0) or not np.all(np.isfinite(values)):
            raise DimensionMismatchError(f"rho components must lie in [0, 1], got {values}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mode", RhoMode(self.mode))

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class PriorMoments:
    """
    Per-stage prior quantities that do not depend on rho.

    means (K, n), covs (K, n, n), roots H_k (K, n, n) and
    root_ratios H_{k+1} H_k^{-1} (K-1, n, n).
    """
    means: np.ndarray
    covs: np.ndarray
    roots: np.ndarray
    root_ratios: np.ndarray

    @property
    def num_stages(self) -> int:
        return self.means.shape[0]

    @property
    def state_dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True, eq=False)
class Dynamics:
    """Transition system of the AR process for one rho"""
    init: GaussianMoments
    trans_matrices: np.ndarray
    trans_offsets: np.ndarray
    trans_noise_covs: np.ndarray


def prior_sigma(spec: PriorSpec) -> np.ndarray:
    """sigma_k(i) = floor + slope * m_k(i), shape (4, N_a, K_f)."""
    return spec.sigma_floor + spec.sigma_slope * spec.reference_profiles()


def _area_expand(per_area: np.ndarray, layout: AreaLayout) -> np.ndarray:
    """(4, N_a) -> (4N,) replicating each area value over its zones."""
    return np.concatenate([np.repeat(row, layout.area_sizes) for row in per_area])


def build_prior_mean(spec: PriorSpec, k: int) -> np.ndarray:
    """m_k = [m^eps'; m^eps''; m^mu'; m^mu''], each area value replicated over its zones."""
    if not 0 <= k < spec.num_freqs:
        raise DimensionMismatchError(f"stage {k} outside 0..{spec.num_freqs - 1}")
    return _area_expand(spec.reference_profiles()[:, :, k], spec.layout)


def build_prior_cov(spec: PriorSpec, k: int) -> np.ndarray:
    """Block-diagonal P_k; each (property, area) block is sigma^2 Toeplitz(1, rho_S, rho_S^2, ...)."""
    if not 0 <= k < spec.num_freqs:
        raise DimensionMismatchError(f"stage {k} outside 0..{spec.num_freqs - 1}")
    sigma = prior_sigma(spec)[:, :, k]
    blocks = []
    for p in range(len(PROPERTIES)):
        for area, size in enumerate(spec.layout.area_sizes):
            correlation = linalg.toeplitz(spec.rho_s ** np.arange(size))
            blocks.append(sigma[p, area] ** 2 * correlation)
    return linalg.block_diag(*blocks)


def _eigh_pd(P: np.ndarray):
    eigvals, eigvecs = linalg.eigh(symmetrize(P))
    if eigvals[0] <= 0.0:
        raise NotPositiveDefiniteError(f"matrix has non-positive eigenvalue {eigvals[0]:.3e}")
    return eigvals, eigvecs


def sym_sqrt(P: np.ndarray) -> np.ndarray:
    """Unique symmetric positive definite H with H H = P."""
    eigvals, eigvecs = _eigh_pd(np.asarray(P, dtype=float))
    return symmetrize((eigvecs * np.sqrt(eigvals)) @ eigvecs.T)


def prior_moments(spec: PriorSpec) -> PriorMoments:
    """m_k, P_k, H_k and H_{k+1} H_k^{-1} for every stage."""
    num_stages = spec.num_freqs
    means = np.stack([build_prior_mean(spec, k) for k in range(num_stages)])
    covs = np.stack([build_prior_cov(spec, k) for k in range(num_stages)])

    roots = np.empty_like(covs)
    inv_roots = np.empty_like(covs)
    for k in range(num_stages):
        eigvals, eigvecs = _eigh_pd(covs[k])
        if eigvals[0] < settings.ROOT_EIGEN_FLOOR * eigvals[-1]:
            raise SingularMatrixError("prior covariance square root is numerically singular", stage=k)
        root_vals = np.sqrt(eigvals)
        roots[k] = symmetrize((eigvecs * root_vals) @ eigvecs.T)
        inv_roots[k] = (eigvecs / root_vals) @ eigvecs.T

    ratios = np.stack([roots[k + 1] @ inv_roots[k] for k in range(num_stages - 1)]) \
        if num_stages > 1 else np.zeros((0,) + covs.shape[1:])
    return PriorMoments(means=means, covs=covs, roots=roots, root_ratios=ratios)


def rho_diagonal(rho: CorrelationParam, layout: AreaLayout) -> np.ndarray:
    """Diagonal of D_rho as a vector of length 4N."""
    expected = rho_dimension(rho.mode, layout)
    if rho.dim != expected:
        raise DimensionMismatchError(f"{rho.mode.value} rho needs {expected} components, got {rho.dim}")
    if rho.mode is RhoMode.SCALAR:
        return np.full(layout.state_dim, rho.values[0])
    if rho.mode is RhoMode.AREA:
        per_area = np.tile(rho.values, (len(PROPERTIES), 1))
    else:
        per_area = rho.values.reshape(len(PROPERTIES), layout.num_areas)
    return _area_expand(per_area, layout)


def expand_rho(rho: CorrelationParam, layout: AreaLayout) -> np.ndarray:
    """D_rho (4N x 4N), constant within each (property, area) block."""
    return np.diag(rho_diagonal(rho, layout))


def build_dynamics(spec: PriorSpec, rho: CorrelationParam, moments: PriorMoments = None) -> Dynamics:
    """
    M_k = D H_{k+1} H_k^{-1}
    b_k = m_{k+1} - M_k m_k
    Q_k = H_{k+1} (I - D^2) H_{k+1}^T
    """
    moments = moments or prior_moments(spec)
    d = rho_diagonal(rho, spec.layout)
    M = d[None, :, None] * moments.root_ratios
    b = moments.means[1:] - np.einsum("kij,kj->ki", M, moments.means[:-1])
    H_next = moments.roots[1:]
    Q = np.stack([symmetrize((H * (1.0 - d ** 2)) @ H.T) for H in H_next]) \
        if len(H_next) else np.zeros((0,) + moments.covs.shape[1:])
    return Dynamics(
        init=GaussianMoments(moments.means[0], moments.covs[0]),
        trans_matrices=M,
        trans_offsets=b,
        trans_noise_covs=Q,
    )


def joint_ar_covariance(spec: PriorSpec, rho: CorrelationParam, moments: PriorMoments = None) -> np.ndarray:
    """Dense covariance of (x_1..x_K): block (i, j) = H_i D^{|i-j|} H_j. Validation oracle."""
    n = spec.layout.state_dim
    num_stages = spec.num_freqs
    if n * num_stages > settings.ORACLE_MAX_DIM:
        raise SizeGuardError(f"4N * K_f = {n * num_stages} exceeds {settings.ORACLE_MAX_DIM}")
    moments = moments or prior_moments(spec)
    d = rho_diagonal(rho, spec.layout)
    H = moments.roots

    joint = np.empty((n * num_stages, n * num_stages))
    for i in range(num_stages):
        for j in range(num_stages):
            joint[i * n:(i + 1) * n, j * n:(j + 1) * n] = (H[i] * d ** abs(i - j)) @ H[j].T
    return symmetrize(joint)
