"""
Forward model, training set and per-frequency linear surrogate

The synthetic forward model stands in for a full-wave solver:

    y = A*_k x + y0*_k + gamma * g_k(x),   g_k(x) = tanh(B_k x + c_k)

The surrogate is fit by QR least squares, and its noise covariance is
R_k = sigma_n^2 I + R_l with R_l estimated on a held-out split.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg

from config.presets import PROPERTIES
from config.settings import settings
from core.armodel import PriorMoments, prior_moments
from models.schemas import PriorSpec, SurrogateHeader, training_split_shortfall, training_split_sizes
from utils.exceptions import (
    DimensionMismatchError,
    InsufficientSamplesError,
    RankDeficientError,
)
from utils.logger import setup_logger
from utils.numerics import symmetrize
from utils.serialization import read_document, read_matrices, read_json, write_document, write_json, write_matrices

logger = setup_logger(__name__)


class ForwardModel(ABC):
    """Deterministic map x (4N) -> y (obs_dim) at each frequency stage"""

    num_stages: int
    state_dim: int
    obs_dim: int

    @abstractmethod
    def evaluate(self, x: np.ndarray, k: int) -> np.ndarray:
        """x of shape (4N,) or (batch, 4N); returns matching (obs_dim,) or (batch, obs_dim)."""


class SyntheticForwardModel(ForwardModel):
    """
    Seeded random linear ground truth plus a bounded smooth nonlinearity.

    Entries of B_k are N(0, 1/n). With input_moments, B_k acts on x
    standardized by the prior mean and marginal std, so the tanh argument has
    unit RMS per component on average over prior draws. Without them B_k acts
    on raw x and the tanh term mostly saturates.

    coupling mixes the mu' columns of A*_k toward the eps'' columns and mu''
    toward eps', making those pairs hard to tell apart.
    """

    def __init__(self, num_stages: int, state_dim: int, obs_dim: int,
                 gamma: float = 0.0, coupling: float = 0.0, seed: int = 0,
                 input_moments: Optional[PriorMoments] = None):
        if state_dim % len(PROPERTIES):
            raise DimensionMismatchError(f"state_dim {state_dim} is not a multiple of {len(PROPERTIES)}")
        self.num_stages = num_stages
        self.state_dim = state_dim
        self.obs_dim = obs_dim
        self.gamma = float(gamma)
        self.coupling = float(coupling)
        self.seed = seed
        if input_moments is not None and input_moments.means.shape != (num_stages, state_dim):
            raise DimensionMismatchError("input moments do not match the forward model dimensions")

        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(state_dim)
        self.linear = rng.normal(0.0, scale, size=(num_stages, obs_dim, state_dim))
        self.offsets = rng.normal(0.0, 1.0, size=(num_stages, obs_dim))
        self.mixing = rng.normal(0.0, scale, size=(num_stages, obs_dim, state_dim))
        self.shifts = rng.normal(0.0, 1.0, size=(num_stages, obs_dim))
        self.center = None if input_moments is None else np.array(input_moments.means)
        self.inv_scale = None if input_moments is None else \
            1.0 / np.sqrt(np.diagonal(input_moments.covs, axis1=1, axis2=2))

        if self.coupling:
            zones = state_dim // len(PROPERTIES)
            block = {prop: slice(i * zones, (i + 1) * zones) for i, prop in enumerate(PROPERTIES)}
            for target, source in (("mu_re", "eps_im"), ("mu_im", "eps_re")):
                self.linear[:, :, block[target]] = (
                    (1.0 - self.coupling) * self.linear[:, :, block[target]]
                    + self.coupling * self.linear[:, :, block[source]]
                )

    def evaluate(self, x: np.ndarray, k: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = x @ self.linear[k].T + self.offsets[k]
        if self.gamma:
            z = x if self.center is None else (x - self.center[k]) * self.inv_scale[k]
            y = y + self.gamma * np.tanh(z @ self.mixing[k].T + self.shifts[k])
        return y


@dataclass
class TrainingSet:
    """(x, y) pairs per stage: inputs (K, N_S, 4N), outputs (K, N_S, obs_dim)"""
    inputs: np.ndarray
    outputs: np.ndarray

    @property
    def num_samples(self) -> int:
        return self.inputs.shape[1]

    @property
    def num_stages(self) -> int:
        return self.inputs.shape[0]

    def split(self, holdout_fraction: float) -> Tuple["TrainingSet", "TrainingSet"]:
        """First (1 - f) share of the samples for fitting, remainder held out."""
        cut, _ = training_split_sizes(self.num_samples, holdout_fraction)
        return (TrainingSet(self.inputs[:, :cut], self.outputs[:, :cut]),
                TrainingSet(self.inputs[:, cut:], self.outputs[:, cut:]))


@dataclass
class LinearFit:
    """Least-squares coefficients per stage and the training residuals"""
    obs_matrices: np.ndarray
    obs_offsets: np.ndarray
    residuals: np.ndarray
    pruned: List[List[int]] = field(default_factory=list)

    def predict(self, x: np.ndarray, k: int) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.obs_matrices[k].T + self.obs_offsets[k]


@dataclass
class SurrogateModel:
    """y_k | x_k ~ N(A_k x_k + y0_k, R_k)"""
    obs_matrices: np.ndarray
    obs_offsets: np.ndarray
    obs_noise_covs: np.ndarray
    noise_std: float = 0.0

    @property
    def num_stages(self) -> int:
        return self.obs_matrices.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.obs_matrices.shape[1]

    @property
    def state_dim(self) -> int:
        return self.obs_matrices.shape[2]

    def evaluate(self, x: np.ndarray, k: int) -> np.ndarray:
        """Noiseless surrogate output."""
        return np.asarray(x, dtype=float) @ self.obs_matrices[k].T + self.obs_offsets[k]


def sample_training_set(
    fwd: ForwardModel,
    prior: PriorSpec,
    num_samples: int,
    seed: int,
    moments: Optional[PriorMoments] = None,
) -> TrainingSet:
    """
    x drawn from N(m_k, P_k), y = fwd(x) without noise.

    Each stage gets its own sub-seed so stages are independent of one another.
    """
    n = prior.layout.state_dim
    if num_samples <= n + 1:
        raise InsufficientSamplesError(f"N_S = {num_samples} must exceed 4N + 1 = {n + 1}")
    if fwd.state_dim != n or fwd.num_stages != prior.num_freqs:
        raise DimensionMismatchError("forward model does not match the prior layout")

    moments = moments or prior_moments(prior)
    streams = np.random.SeedSequence(seed).spawn(prior.num_freqs)
    inputs = np.empty((prior.num_freqs, num_samples, n))
    outputs = np.empty((prior.num_freqs, num_samples, fwd.obs_dim))
    for k, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        z = rng.standard_normal((num_samples, n))
        inputs[k] = moments.means[k] + z @ moments.roots[k]
        outputs[k] = fwd.evaluate(inputs[k], k)
    logger.info(f"Sampled training set: {num_samples} samples x {prior.num_freqs} stages")
    return TrainingSet(inputs=inputs, outputs=outputs)


def _qr_solve(design: np.ndarray, targets: np.ndarray, rank_tol: float = 1e-10):
    """Pivoted QR least squares; returns (coefficients, diag(R^-1 R^-T) in original column order)."""
    q, r, piv = linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > rank_tol * diag[0])) if diag.size and diag[0] > 0 else 0
    if rank < design.shape[1]:
        raise RankDeficientError("design matrix is rank deficient", sorted(int(c) for c in piv[rank:]))

    solved = linalg.solve_triangular(r, q.T @ targets)
    coefficients = np.empty_like(solved)
    coefficients[piv] = solved
    r_inv = linalg.solve_triangular(r, np.eye(r.shape[0]))
    unscaled_var = np.empty(design.shape[1])
    unscaled_var[piv] = np.sum(r_inv ** 2, axis=1)
    return coefficients, unscaled_var


def _t_statistics(design, targets, coefficients, unscaled_var) -> np.ndarray:
    """Largest |t| over outputs for every column."""
    residuals = targets - design @ coefficients
    dof = max(design.shape[0] - design.shape[1], 1)
    s2 = np.sum(residuals ** 2, axis=0) / dof
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.abs(coefficients) / np.sqrt(np.outer(unscaled_var, s2))
    t[~np.isfinite(t)] = np.inf
    return np.max(t, axis=1)


def fit_linear(train: TrainingSet, prune_threshold: Optional[float] = None) -> LinearFit:
    """
    Least squares of [1 x] coef ~ y per stage via QR, never forming X^T X.

    With prune_threshold set, columns whose largest |t| over outputs falls
    below it are dropped (A gets zero columns) and the stage is refit.
    """
    num_stages, num_samples, n = train.inputs.shape
    p = train.outputs.shape[2]
    A = np.zeros((num_stages, p, n))
    y0 = np.empty((num_stages, p))
    residuals = np.empty((num_stages, num_samples, p))
    pruned: List[List[int]] = []

    for k in range(num_stages):
        X = train.inputs[k]
        Y = train.outputs[k]
        design = np.hstack([np.ones((num_samples, 1)), X])
        coefficients, unscaled_var = _qr_solve(design, Y)
        kept = np.arange(n)

        if prune_threshold is not None:
            t_stats = _t_statistics(design, Y, coefficients, unscaled_var)[1:]
            kept = np.flatnonzero(t_stats >= prune_threshold)
            dropped = sorted(set(range(n)) - set(kept.tolist()))
            if dropped:
                logger.debug(f"stage {k}: pruned columns {dropped}")
                design = np.hstack([np.ones((num_samples, 1)), X[:, kept]])
                coefficients, _ = _qr_solve(design, Y)
            pruned.append(dropped)

        y0[k] = coefficients[0]
        A[k][:, kept] = coefficients[1:].T
        residuals[k] = Y - design @ coefficients

    return LinearFit(obs_matrices=A, obs_offsets=y0, residuals=residuals, pruned=pruned)


def residual_covariance(residuals: np.ndarray) -> np.ndarray:
    """Unbiased sample covariance of held-out residuals (samples x obs_dim), symmetrized."""
    residuals = np.asarray(residuals, dtype=float)
    if residuals.ndim == 1:
        residuals = residuals[:, None]
    if residuals.shape[0] < 2:
        raise InsufficientSamplesError("residual covariance needs at least 2 held-out samples")
    return symmetrize(np.atleast_2d(np.cov(residuals, rowvar=False, ddof=1)))


def fit_surrogate(
    train: TrainingSet,
    noise_std: float,
    holdout_fraction: Optional[float] = None,
    prune_threshold: Optional[float] = None,
) -> SurrogateModel:
    """Fit A_k, y0_k on the fitting split and set R_k = sigma_n^2 I + R_l from the holdout."""
    holdout_fraction = settings.SURROGATE_HOLDOUT if holdout_fraction is None else holdout_fraction
    prune_threshold = settings.SURROGATE_PRUNE_T if prune_threshold is None else prune_threshold
    shortfall = training_split_shortfall(train.num_samples, train.inputs.shape[2], holdout_fraction)
    if shortfall:
        raise InsufficientSamplesError(f"N_S = {train.num_samples}: {shortfall}")
    fitting, holdout = train.split(holdout_fraction)
    fit = fit_linear(fitting, prune_threshold)

    p = train.outputs.shape[2]
    noise_covs = np.empty((train.num_stages, p, p))
    for k in range(train.num_stages):
        held_residuals = holdout.outputs[k] - fit.predict(holdout.inputs[k], k)
        noise_covs[k] = noise_std ** 2 * np.eye(p) + residual_covariance(held_residuals)
    logger.info(
        f"Surrogate fitted on {fitting.num_samples} samples, "
        f"{holdout.num_samples} held out, max |R_l| = {np.max(np.abs(noise_covs - noise_std ** 2 * np.eye(p))):.3e}"
    )
    return SurrogateModel(
        obs_matrices=fit.obs_matrices,
        obs_offsets=fit.obs_offsets,
        obs_noise_covs=noise_covs,
        noise_std=noise_std,
    )


def save_surrogate(directory: Path, surrogate: SurrogateModel, storage: Optional[str] = None) -> None:
    """
    surrogate.json header, plus either inline JSON arrays (small models) or
    surrogate_matrices.json/.bin (binary, large models).
    """
    directory = Path(directory)
    size = surrogate.obs_matrices.size + surrogate.obs_noise_covs.size
    storage = storage or ("json" if size <= settings.SURROGATE_JSON_MAX_ELEMENTS else "binary")
    header = SurrogateHeader(
        num_stages=surrogate.num_stages,
        state_dim=surrogate.state_dim,
        obs_dim=surrogate.obs_dim,
        noise_std=surrogate.noise_std,
        storage=storage,
    )
    write_document(directory / "surrogate.json", header)
    arrays = {
        "obs_matrices": surrogate.obs_matrices,
        "obs_offsets": surrogate.obs_offsets,
        "obs_noise_covs": surrogate.obs_noise_covs,
    }
    if storage == "json":
        write_json(directory / "surrogate_arrays.json", {k: v.tolist() for k, v in arrays.items()})
    else:
        write_matrices(directory, "surrogate_matrices", arrays, meta=header.model_dump())


def load_surrogate(directory: Path) -> SurrogateModel:
    directory = Path(directory)
    header = read_document(directory / "surrogate.json", SurrogateHeader)
    if header.storage == "json":
        arrays = {k: np.asarray(v, dtype=float) for k, v in read_json(directory / "surrogate_arrays.json").items()}
    else:
        arrays, _ = read_matrices(directory, "surrogate_matrices")
    surrogate = SurrogateModel(noise_std=header.noise_std, **arrays)
    if (surrogate.num_stages, surrogate.obs_dim, surrogate.state_dim) != \
            (header.num_stages, header.obs_dim, header.state_dim):
        raise DimensionMismatchError("surrogate arrays do not match their header")
    return surrogate


def save_training_set(directory: Path, train: TrainingSet) -> None:
    write_matrices(directory, "training_set", {"inputs": train.inputs, "outputs": train.outputs},
                   meta={"num_samples": train.num_samples, "num_stages": train.num_stages})


def load_training_set(directory: Path) -> TrainingSet:
    arrays, _ = read_matrices(directory, "training_set")
    return TrainingSet(inputs=arrays["inputs"], outputs=arrays["outputs"])
