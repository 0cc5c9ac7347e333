"""
Inversion pipeline: context -> SMC over rho -> Rao-Blackwellized summary
Orchestrates one complete inversion of an observation sequence
"""
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from config.settings import settings
from core.armodel import PriorMoments, RhoMode, prior_moments
from core.estimator import PosteriorSummary, posterior_samples, summarize_posterior
from core.smc import InversionContext, Scheme, SmcResult, smc_run
from core.surrogate import SurrogateModel
from models.schemas import PriorSpec, SmcConfig, SummaryHeader, TraceRecord
from utils.logger import setup_logger

logger = setup_logger(__name__)


@dataclass
class InversionResult:
    """Everything one inversion produces"""
    summary: PosteriorSummary
    smc: SmcResult
    context: InversionContext
    seed: int
    breakdown: Dict[str, float] = field(default_factory=dict)

    @property
    def trace(self) -> List[TraceRecord]:
        return self.smc.trace

    @property
    def total_duration(self) -> float:
        return sum(self.breakdown.values())

    def header(self) -> SummaryHeader:
        prior = self.context.prior
        return SummaryHeader(
            num_zones=prior.layout.num_zones,
            state_dim=prior.layout.state_dim,
            frequencies=list(prior.frequencies.values),
            n_particles=self.smc.cloud.n_particles,
            rho_mode=self.context.mode.value,
            scheme=self.smc.scheme.value,
            seed=self.seed,
            log_evidence=self.smc.log_evidence,
            has_covariances=self.summary.covariances is not None,
        )


class InversionPipeline:
    """Complete inversion for a fixed prior and surrogate"""

    def __init__(
        self,
        prior: PriorSpec,
        surrogate: SurrogateModel,
        scheme: Union[Scheme, str] = settings.SMC_SCHEME,
        n_particles: int = settings.SMC_PARTICLES,
        rho_mode: Union[RhoMode, str] = RhoMode.AREA_PROPERTY,
        config: Optional[SmcConfig] = None,
        retain_covariances: bool = False,
    ):
        self.prior = prior
        self.surrogate = surrogate
        self.scheme = Scheme(scheme)
        self.n_particles = n_particles
        self.rho_mode = RhoMode(rho_mode)
        self.config = config or SmcConfig.from_settings()
        self.retain_covariances = retain_covariances
        self._moments: Optional[PriorMoments] = None
        logger.info(
            f"Inversion pipeline initialized: scheme={self.scheme.value} "
            f"N_p={n_particles} rho_mode={self.rho_mode.value}"
        )

    @property
    def moments(self) -> PriorMoments:
        if self._moments is None:
            self._moments = prior_moments(self.prior)
        return self._moments

    def context(self, observations: np.ndarray) -> InversionContext:
        return InversionContext(
            prior=self.prior,
            surrogate=self.surrogate,
            observations=observations,
            mode=self.rho_mode,
            kappa=self.config.kappa,
            moments=self.moments,
        )

    def run(
        self,
        observations: np.ndarray,
        seed: int,
        on_generation: Optional[Callable[[TraceRecord], None]] = None,
    ) -> InversionResult:
        """
        Args:
            observations: (K_f, obs_dim)
            seed: SMC seed; identical seeds give identical results
            on_generation: called with each trace record as it is produced

        Returns:
            InversionResult with the posterior summary and the SMC trace
        """
        breakdown: Dict[str, float] = {}

        # context
        started = time.perf_counter()
        context = self.context(observations)
        breakdown["context_duration"] = time.perf_counter() - started

        # Stage 1: SMC over rho
        logger.info(f"[seed {seed}] Stage 1: SMC")
        started = time.perf_counter()
        smc = smc_run(context, self.scheme, self.n_particles, self.config, seed, on_generation)
        breakdown["smc_duration"] = time.perf_counter() - started

        # Stage 2: Rao-Blackwellized estimators
        logger.info(f"[seed {seed}] Stage 2: estimators")
        started = time.perf_counter()
        summary = summarize_posterior(smc.cloud, context, self.retain_covariances)
        breakdown["estimator_duration"] = time.perf_counter() - started

        result = InversionResult(summary=summary, smc=smc, context=context, seed=seed, breakdown=breakdown)
        logger.info(
            f"[seed {seed}] Inversion completed in {result.total_duration:.2f}s "
            f"({len(smc.trace)} generations)"
        )
        return result

    def sample(self, result: InversionResult, count: int, seed: int) -> np.ndarray:
        """Posterior trajectories of x, shape (count, K_f, 4N)."""
        return posterior_samples(result.smc.cloud, result.context, count, seed)
