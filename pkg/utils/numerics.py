"""
Small dense linear-algebra and weight helpers shared by the numerical core
"""
from typing import Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from config.settings import settings
from utils.exceptions import SingularMatrixError


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    """Return (C + C^T) / 2."""
    return 0.5 * (matrix + matrix.T)


def cholesky_with_jitter(
    matrix: np.ndarray,
    stage: Optional[int] = None,
    what: str = "matrix",
) -> Tuple[np.ndarray, bool]:
    """
    Lower Cholesky factor usable with scipy.linalg.cho_solve.

    One retry with 1e-12 * trace / n added to the diagonal before
    declaring the matrix singular.

    Returns:
        (cho_factor tuple, whether jitter was needed)
    """
    try:
        return linalg.cho_factor(matrix, lower=True, check_finite=False), False
    except linalg.LinAlgError:
        pass

    n = matrix.shape[0]
    jitter = settings.JITTER_SCALE * max(np.trace(matrix) / n, np.finfo(float).tiny)
    try:
        factor = linalg.cho_factor(matrix + jitter * np.eye(n), lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularMatrixError(f"{what} is not positive definite even after jitter", stage) from exc
    return factor, True


def cho_logdet(factor) -> float:
    """log det from a cho_factor result."""
    return 2.0 * float(np.sum(np.log(np.diag(factor[0]))))


def psd_sqrt_factor(cov: np.ndarray) -> np.ndarray:
    """
    Factor F with F F^T = cov for a possibly singular PSD matrix.

    Negative round-off eigenvalues are clipped to zero.
    """
    eigvals, eigvecs = linalg.eigh(symmetrize(cov))
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def draw_gaussian(rng: np.random.Generator, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """One draw from N(mean, cov), cov only required PSD."""
    return mean + psd_sqrt_factor(cov) @ rng.standard_normal(mean.shape[0])


def is_psd(matrix: np.ndarray, rel_tol: float = 1e-10) -> bool:
    """min eigenvalue >= -rel_tol * max |eigenvalue|"""
    eigvals = linalg.eigvalsh(symmetrize(matrix))
    scale = max(np.max(np.abs(eigvals)), np.finfo(float).tiny)
    return bool(eigvals[0] >= -rel_tol * scale)


def effective_sample_size(log_weights: np.ndarray) -> float:
    """(sum w)^2 / sum w^2 computed in log space; 0 when every weight vanished."""
    log_weights = np.asarray(log_weights, dtype=float)
    if not np.any(np.isfinite(log_weights)):
        return 0.0
    return float(np.exp(2.0 * logsumexp(log_weights) - logsumexp(2.0 * log_weights)))


def normalize_log_weights(log_weights: np.ndarray) -> np.ndarray:
    """Normalized linear weights with max-subtraction."""
    log_weights = np.asarray(log_weights, dtype=float)
    return np.exp(log_weights - logsumexp(log_weights))
