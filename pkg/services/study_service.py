"""
Study Service
Statistical performance studies: repeated inversions of one dataset
(stochastic variation) and inversions of independent datasets (average precision)
"""
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

from config.settings import settings
from core.pipeline import InversionPipeline
from core.smc import Scheme
from models.schemas import AnalysisReport, ScenarioSpec, SmcConfig
from services.scenario_service import PreparedScenario, ScenarioService
from utils.exceptions import ConfigurationError
from utils.logger import setup_logger

logger = setup_logger(__name__)


class Inverter(Protocol):
    """Anything that turns observations into a result carrying a PosteriorSummary"""

    def run(self, observations: np.ndarray, seed: int): ...


def sub_seeds(seed: int, count: int) -> List[int]:
    """Independent integer seeds derived from one root seed."""
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(count)]


def rms_across_runs(stack: np.ndarray) -> np.ndarray:
    """Cellwise RMS deviation from the mean over axis 0 (divisor R)."""
    stack = np.asarray(stack, dtype=float)
    return np.sqrt(np.mean((stack - stack.mean(axis=0)) ** 2, axis=0))


def rmse_against(estimates: np.ndarray, truths: np.ndarray) -> np.ndarray:
    """Cellwise sqrt(mean_r (estimate_r - truth_r)^2); truths broadcast against estimates."""
    estimates = np.asarray(estimates, dtype=float)
    return np.sqrt(np.mean((estimates - np.asarray(truths, dtype=float)) ** 2, axis=0))


def cellwise_ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    """numerator / denominator, 0 where both vanish and inf where only the denominator does."""
    numerator = np.asarray(numerator, dtype=float)
    denominator = np.asarray(denominator, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = numerator / denominator
    return np.where((numerator == 0) & (denominator == 0), 0.0, ratio)


def fraction_within_factor(values: np.ndarray, reference: np.ndarray, factor: float = 2.0) -> float:
    """Share of cells with reference / factor <= value <= factor * reference."""
    values = np.asarray(values, dtype=float)
    reference = np.asarray(reference, dtype=float)
    inside = (values <= factor * reference) & (values >= reference / factor)
    return float(np.mean(inside))


def _mean_max(name: str, matrix: np.ndarray) -> dict:
    finite = matrix[np.isfinite(matrix)]
    if finite.size == 0:
        return {f"mean_{name}": 0.0, f"max_{name}": 0.0}
    return {f"mean_{name}": float(finite.mean()), f"max_{name}": float(finite.max())}


def _invert(pipeline: Inverter, observations: np.ndarray, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    summary = pipeline.run(observations, seed).summary
    return summary.xhat, summary.sigma_hat


def _run_all(
    pipeline: Inverter,
    datasets: Sequence[np.ndarray],
    seeds: Sequence[int],
    max_workers: Optional[int],
) -> Tuple[np.ndarray, np.ndarray]:
    """Inversions in seed order; results do not depend on the worker count."""
    workers = settings.MAX_WORKERS if max_workers is None else max_workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_invert, [pipeline] * len(seeds), datasets, seeds))
    else:
        results = [_invert(pipeline, y, s) for y, s in zip(datasets, seeds)]
    xhats = np.stack([r[0] for r in results])
    sigmas = np.stack([r[1] for r in results])
    return xhats, sigmas


def default_pipeline(prepared: PreparedScenario, config: Optional[SmcConfig] = None) -> InversionPipeline:
    spec = prepared.spec
    return InversionPipeline(
        prior=spec.prior,
        surrogate=prepared.surrogate,
        scheme=Scheme(spec.scheme),
        n_particles=spec.n_particles,
        rho_mode=spec.rho_mode,
        config=config,
    )


def stochastic_variation_report(xhats: np.ndarray, sigmas: np.ndarray, seeds: Sequence[int]) -> AnalysisReport:
    """Table of cellwise means, RMS and RMS / mean sigma over R repeated inversions."""
    mean_xhat = xhats.mean(axis=0)
    mean_sigma = sigmas.mean(axis=0)
    rms_xhat = rms_across_runs(xhats)
    rms_sigma = rms_across_runs(sigmas)
    summary = {}
    summary.update(_mean_max("rms_xhat", rms_xhat))
    summary.update(_mean_max("rms_sigma", rms_sigma))
    summary.update(_mean_max("ratio_xhat", cellwise_ratio(rms_xhat, mean_sigma)))
    summary.update(_mean_max("ratio_sigma", cellwise_ratio(rms_sigma, mean_sigma)))
    summary["mean_sigma"] = float(mean_sigma.mean())
    summary["ratio_of_means_xhat"] = float(cellwise_ratio(rms_xhat.mean(), mean_sigma.mean()))
    summary["ratio_of_means_sigma"] = float(cellwise_ratio(rms_sigma.mean(), mean_sigma.mean()))
    return AnalysisReport(
        kind="stochastic_variation",
        runs=len(seeds),
        shape=list(mean_xhat.shape),
        seeds=list(seeds),
        mean_xhat=mean_xhat.tolist(),
        mean_sigma=mean_sigma.tolist(),
        rms_xhat=rms_xhat.tolist(),
        rms_sigma=rms_sigma.tolist(),
        summary=summary,
    )


def average_precision_report(
    xhats: np.ndarray,
    sigmas: np.ndarray,
    truths: np.ndarray,
    baseline: np.ndarray,
    seeds: Sequence[int],
) -> AnalysisReport:
    """RMSE against the truth next to the mean sigma, plus the prior-mean baseline."""
    mean_sigma = sigmas.mean(axis=0)
    rmse = rmse_against(xhats, truths)
    baseline_rmse = rmse_against(np.broadcast_to(baseline, xhats.shape), truths)
    summary = {}
    summary.update(_mean_max("rmse", rmse))
    summary.update(_mean_max("baseline_rmse", baseline_rmse))
    summary.update(_mean_max("rmse_over_sigma", cellwise_ratio(rmse, mean_sigma)))
    summary["mean_sigma"] = float(mean_sigma.mean())
    summary["fraction_within_factor_2"] = fraction_within_factor(rmse, mean_sigma, 2.0)
    return AnalysisReport(
        kind="average_precision",
        runs=len(seeds),
        shape=list(mean_sigma.shape),
        seeds=list(seeds),
        mean_xhat=xhats.mean(axis=0).tolist(),
        mean_sigma=mean_sigma.tolist(),
        rmse=rmse.tolist(),
        baseline_rmse=baseline_rmse.tolist(),
        summary=summary,
    )


def run_stochastic_variation_study(
    spec: ScenarioSpec,
    repetitions: int = 30,
    pipeline: Optional[Inverter] = None,
    prepared: Optional[PreparedScenario] = None,
    max_workers: Optional[int] = None,
) -> AnalysisReport:
    """
    One observation sequence, inverted `repetitions` times with SMC seeds
    derived from spec.smc_seed.
    """
    if repetitions < 2:
        raise ConfigurationError(f"stochastic-variation study needs at least 2 repetitions, got {repetitions}")
    prepared = prepared or ScenarioService().prepare(spec)
    pipeline = pipeline or default_pipeline(prepared)
    observations = prepared.observations(prepared.truth(spec.truth_seed), spec.data_seed)
    seeds = sub_seeds(spec.smc_seed, repetitions)

    logger.info(f"Stochastic-variation study: {repetitions} inversions of one dataset")
    xhats, sigmas = _run_all(pipeline, [observations] * repetitions, seeds, max_workers)
    report = stochastic_variation_report(xhats, sigmas, seeds)
    logger.info(
        f"mean RMS(xhat) = {report.summary['mean_rms_xhat']:.3e}, "
        f"mean RMS(xhat)/sigma = {report.summary['mean_ratio_xhat']:.3e}"
    )
    return report


def run_average_precision_study(
    spec: ScenarioSpec,
    num_datasets: int = 30,
    pipeline: Optional[Inverter] = None,
    prepared: Optional[PreparedScenario] = None,
    noise_std: Optional[float] = None,
    max_workers: Optional[int] = None,
) -> AnalysisReport:
    """
    Independent datasets y^(r), each inverted once.

    With truth_source="prior" every dataset gets its own truth drawn from the
    AR prior, so the RMSE is comparable to the posterior sigma.
    """
    if num_datasets < 2:
        raise ConfigurationError(f"average-precision study needs at least 2 datasets, got {num_datasets}")
    if noise_std is not None:
        spec = spec.model_copy(update={"noise_std": noise_std})
    prepared = prepared or ScenarioService().prepare(spec)
    pipeline = pipeline or default_pipeline(prepared)

    truth_seeds = sub_seeds(spec.truth_seed, num_datasets)
    data_seeds = sub_seeds(spec.data_seed, num_datasets)
    smc_seeds = sub_seeds(spec.smc_seed, num_datasets)
    if spec.truth_source == "prior":
        truths = np.stack([prepared.truth(s) for s in truth_seeds])
    else:
        truths = np.stack([prepared.truth()] * num_datasets)
    datasets = [prepared.observations(x, s, noise_std) for x, s in zip(truths, data_seeds)]

    logger.info(f"Average-precision study: {num_datasets} independent datasets")
    xhats, sigmas = _run_all(pipeline, datasets, smc_seeds, max_workers)
    baseline = prepared.moments.means.T
    report = average_precision_report(xhats, sigmas, truths, baseline, smc_seeds)
    logger.info(
        f"mean RMSE = {report.summary['mean_rmse']:.3e} "
        f"(prior-mean baseline {report.summary['mean_baseline_rmse']:.3e})"
    )
    return report
