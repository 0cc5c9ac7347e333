"""
Sequential Monte Carlo sampler over the correlation parameter rho

The Kalman filter of the conditional linear-Gaussian model is the
likelihood engine: for every particle it returns log J_1..log J_K.
Three interpolating schemes bridge p(rho) to p(rho | y):

    annealed       h_n = p(rho) p(y | rho)^alpha_n
    data_tempered  h_n = p(rho) J_1 ... J_n
    hybrid         h_n = p(rho) J_1 ... J_{r-1} J_r^alpha

Selection uses systematic resampling; mutation composes Metropolis-Hastings
kernels with reflected uniform proposals and a geometrically shrinking window.
"""
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Union

import numpy as np
from scipy.optimize import bisect
from scipy.special import logsumexp

from core.armodel import CorrelationParam, PriorMoments, RhoMode, build_dynamics, prior_moments, rho_dimension
from core.lgss import FilterOutput, LgssModel, SeedLike, kalman_filter
from core.surrogate import SurrogateModel
from models.schemas import PriorSpec, SmcConfig, TraceRecord
from utils.exceptions import ConfigurationError, DegeneracyError, DimensionMismatchError, InversionException
from utils.logger import setup_logger
from utils.numerics import effective_sample_size, normalize_log_weights

logger = setup_logger(__name__)

_ALPHA_EPS = 1e-12


class Scheme(str, Enum):
    ANNEALED = "annealed"
    DATA_TEMPERED = "data_tempered"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class TemperingState:
    """
    annealed: alpha in [0, 1]
    data_tempered: assimilated observations r
    hybrid: r fully assimilated observations and exponent alpha on J_{r+1}
    """
    scheme: Scheme
    alpha: float = 0.0
    assimilated: int = 0

    def is_complete(self, num_stages: int) -> bool:
        if self.scheme is Scheme.ANNEALED:
            return self.alpha >= 1.0
        return self.assimilated >= num_stages

    def progress(self, num_stages: int) -> float:
        if self.scheme is Scheme.ANNEALED:
            return self.alpha
        if self.scheme is Scheme.DATA_TEMPERED:
            return self.assimilated / num_stages
        return (self.assimilated + self.alpha) / num_stages

    @classmethod
    def initial(cls, scheme: Union[Scheme, str]) -> "TemperingState":
        return cls(scheme=Scheme(scheme))

    @classmethod
    def completed(cls, scheme: Union[Scheme, str], num_stages: int) -> "TemperingState":
        scheme = Scheme(scheme)
        if scheme is Scheme.ANNEALED:
            return cls(scheme=scheme, alpha=1.0)
        return cls(scheme=scheme, assimilated=num_stages)


@dataclass
class Evaluation:
    """Per-particle likelihood pieces"""
    log_increments: np.ndarray
    filter_output: Optional[FilterOutput] = None

    @property
    def log_likelihood(self) -> float:
        return float(np.sum(self.log_increments))


@dataclass
class InversionContext:
    """Everything a particle needs to be scored: prior, surrogate, observations and rho mode"""
    prior: PriorSpec
    surrogate: SurrogateModel
    observations: np.ndarray
    mode: RhoMode = RhoMode.AREA_PROPERTY
    kappa: float = 3.0
    moments: Optional[PriorMoments] = None

    def __post_init__(self):
        self.mode = RhoMode(self.mode)
        self.observations = np.asarray(self.observations, dtype=float)
        if self.moments is None:
            self.moments = prior_moments(self.prior)
        expected = (self.prior.num_freqs, self.surrogate.obs_dim)
        if self.observations.shape != expected:
            raise DimensionMismatchError(f"observations shape {self.observations.shape}, expected {expected}")
        if self.surrogate.num_stages != self.prior.num_freqs or self.surrogate.state_dim != self.prior.layout.state_dim:
            raise DimensionMismatchError("surrogate does not match the prior layout or frequency grid")

    @property
    def dimension(self) -> int:
        return rho_dimension(self.mode, self.prior.layout)

    @property
    def num_stages(self) -> int:
        return self.prior.num_freqs

    def rho(self, values: np.ndarray) -> CorrelationParam:
        return CorrelationParam(values=values, mode=self.mode)

    def model_for(self, rho: Union[CorrelationParam, np.ndarray]) -> LgssModel:
        if not isinstance(rho, CorrelationParam):
            rho = self.rho(rho)
        dynamics = build_dynamics(self.prior, rho, self.moments)
        return LgssModel(
            init=dynamics.init,
            obs_matrices=self.surrogate.obs_matrices,
            obs_offsets=self.surrogate.obs_offsets,
            obs_noise_covs=self.surrogate.obs_noise_covs,
            trans_matrices=dynamics.trans_matrices,
            trans_offsets=dynamics.trans_offsets,
            trans_noise_covs=dynamics.trans_noise_covs,
        )

    def evaluate(self, rho: Union[CorrelationParam, np.ndarray]) -> Evaluation:
        """Kalman filter for one rho; any failure yields log J = -inf."""
        try:
            filter_out = kalman_filter(self.model_for(rho), self.observations)
        except InversionException as exc:
            values = rho.values if isinstance(rho, CorrelationParam) else rho
            logger.warning(f"particle rho={np.round(values, 6).tolist()} rejected: [{exc.code}] {exc.message}")
            return Evaluation(log_increments=np.full(self.num_stages, -np.inf))
        return Evaluation(log_increments=filter_out.log_increments, filter_output=filter_out)


def log_prior_rho(rho: np.ndarray, kappa: float = 3.0) -> Union[float, np.ndarray]:
    """
    sum_i log p(rho_i), p(r) = kappa e^{kappa r} / (e^kappa - 1) on [0, 1].

    kappa = 0 is the uniform density. Works on the last axis; -inf outside [0, 1]^d.
    """
    rho = np.asarray(rho, dtype=float)
    if kappa == 0.0:
        log_norm = 0.0
    else:
        log_norm = np.log(kappa / np.expm1(kappa))
    inside = np.all((rho >= 0.0) & (rho <= 1.0), axis=-1)
    value = np.sum(log_norm + kappa * rho, axis=-1)
    value = np.where(inside, value, -np.inf)
    return float(value) if np.ndim(value) == 0 else value


def sample_prior_rho(rng: np.random.Generator, size: int, dim: int, kappa: float = 3.0) -> np.ndarray:
    """Componentwise acceptance/rejection against the uniform envelope on [0, 1]."""
    out = np.empty(size * dim)
    filled = 0
    peak = max(kappa, 0.0)
    while filled < out.size:
        batch = max(2 * (out.size - filled), 16)
        candidates = rng.random(batch)
        keep = candidates[np.log(rng.random(batch)) < kappa * candidates - peak]
        take = min(keep.size, out.size - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out.reshape(size, dim)


def _scaled(alpha: float, values):
    """alpha * values with 0 * (-inf) = 0"""
    if alpha == 0.0:
        return np.zeros_like(values, dtype=float)
    return alpha * values


def loglik_part(log_increments: np.ndarray, state: TemperingState):
    """Data term of log h_n for one (K,) or many (N, K) particles."""
    incs = np.asarray(log_increments, dtype=float)
    num_stages = incs.shape[-1]
    if state.scheme is Scheme.ANNEALED:
        return _scaled(state.alpha, np.sum(incs, axis=-1))
    full = np.sum(incs[..., :state.assimilated], axis=-1)
    if state.scheme is Scheme.HYBRID and state.assimilated < num_stages:
        full = full + _scaled(state.alpha, incs[..., state.assimilated])
    return full


def tempered_log_target(log_prior: float, log_increments: np.ndarray, state: TemperingState) -> float:
    if not np.isfinite(log_prior):
        return -np.inf
    return float(log_prior + loglik_part(log_increments, state))


def log_target(rho: np.ndarray, tempering: TemperingState, context: InversionContext) -> float:
    """log h_n(rho) up to a constant shared by every rho."""
    log_prior = log_prior_rho(rho, context.kappa)
    if not np.isfinite(log_prior):
        return -np.inf
    evaluation = context.evaluate(np.asarray(rho, dtype=float))
    return tempered_log_target(log_prior, evaluation.log_increments, tempering)


def adaptive_delta_alpha(
    log_likelihoods: np.ndarray,
    alpha: float,
    target_fraction: float = 0.75,
    min_delta: float = 1e-6,
    tolerance: float = 0.0,
) -> float:
    """
    Exponent increment such that weights exp(delta * log_likelihoods) keep an
    ESS of target_fraction * N_p, found by bisection on [min_delta, 1 - alpha].

    The full remaining step is taken when its ESS is within tolerance * N_p of the target.
    """
    log_likelihoods = np.asarray(log_likelihoods, dtype=float)
    remaining = 1.0 - alpha
    if remaining <= min_delta:
        return remaining
    target = target_fraction * log_likelihoods.size

    def ess_gap(delta: float) -> float:
        return effective_sample_size(_scaled(delta, log_likelihoods)) - target

    if ess_gap(remaining) >= -tolerance * log_likelihoods.size:
        return remaining
    if ess_gap(min_delta) <= 0.0:
        return min_delta
    return float(bisect(ess_gap, min_delta, remaining, xtol=1e-13, maxiter=200))


@dataclass
class ParticleCloud:
    """N_p particles in [0, 1]^d with cached per-particle likelihood pieces"""
    particles: np.ndarray
    log_weights: np.ndarray
    log_increments: np.ndarray
    filter_outputs: List[Optional[FilterOutput]] = field(default_factory=list)
    generation: int = 0

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]

    @property
    def dimension(self) -> int:
        return self.particles.shape[1]

    def weights(self) -> np.ndarray:
        return normalize_log_weights(self.log_weights)

    def take(self, indices: np.ndarray) -> "ParticleCloud":
        outputs = [self.filter_outputs[i] for i in indices] if self.filter_outputs else []
        return ParticleCloud(
            particles=self.particles[indices].copy(),
            log_weights=np.zeros(len(indices)),
            log_increments=self.log_increments[indices].copy(),
            filter_outputs=outputs,
            generation=self.generation,
        )


def systematic_resample(log_weights: np.ndarray, rng: np.random.Generator, count: Optional[int] = None) -> np.ndarray:
    """Offspring indices with E[count_i] = count * w_i, one uniform draw for the whole cloud."""
    weights = normalize_log_weights(log_weights)
    n = weights.shape[0]
    count = n if count is None else count
    positions = (rng.random() + np.arange(count)) / count
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.minimum(np.searchsorted(cumulative, positions, side="right"), n - 1)


def select_resample(cloud: ParticleCloud, log_weights: np.ndarray, seed: SeedLike = None) -> ParticleCloud:
    """Systematic resampling of the cloud; result carries uniform weights."""
    log_weights = np.asarray(log_weights, dtype=float)
    if not np.any(np.isfinite(log_weights)):
        raise DegeneracyError("every particle weight is zero, selection impossible")
    indices = systematic_resample(log_weights, np.random.default_rng(seed))
    return cloud.take(indices)


def reflect_unit(values: np.ndarray) -> np.ndarray:
    """Fold values into [0, 1] by mirror reflection at both ends."""
    folded = np.mod(np.abs(values), 2.0)
    return np.where(folded > 1.0, 2.0 - folded, folded)


@dataclass
class MutationResult:
    rho: np.ndarray
    log_h: float
    accepted: int


def mh_mutate(
    rho: np.ndarray,
    log_h: Callable[[np.ndarray], float],
    window: float,
    iterations: int,
    seed: SeedLike = None,
    current_log_h: Optional[float] = None,
) -> MutationResult:
    """
    iterations Metropolis-Hastings steps targeting exp(log_h), proposal
    uniform on [rho - window, rho + window]^d reflected into [0, 1]^d.
    """
    if window <= 0.0:
        raise ConfigurationError("proposal window must be positive")
    rng = np.random.default_rng(seed)
    current = np.asarray(rho, dtype=float).copy()
    current_value = log_h(current) if current_log_h is None else current_log_h
    accepted = 0
    for _ in range(iterations):
        proposal = reflect_unit(current + rng.uniform(-window, window, size=current.shape))
        proposal_value = log_h(proposal)
        if np.log(rng.random()) < proposal_value - current_value:
            current, current_value = proposal, proposal_value
            accepted += 1
    return MutationResult(rho=current, log_h=current_value, accepted=accepted)


@dataclass
class SmcResult:
    cloud: ParticleCloud
    trace: List[TraceRecord]
    log_evidence: float
    scheme: Scheme


def _evaluate_cloud(context: InversionContext, particles: np.ndarray):
    evaluations = [context.evaluate(rho) for rho in particles]
    log_increments = np.stack([e.log_increments for e in evaluations])
    return log_increments, [e.filter_output for e in evaluations]


def _next_state(state: TemperingState, cloud: ParticleCloud, config: SmcConfig, forced: bool):
    """Tempering state after one selection step, and the increment used."""
    num_stages = cloud.log_increments.shape[1]
    if forced:
        return TemperingState.completed(state.scheme, num_stages), 1.0 - state.alpha

    if state.scheme is Scheme.DATA_TEMPERED:
        return replace(state, assimilated=state.assimilated + 1), 1.0

    if state.scheme is Scheme.ANNEALED:
        log_likelihoods = np.sum(cloud.log_increments, axis=1)
    else:
        log_likelihoods = cloud.log_increments[:, state.assimilated]
    delta = adaptive_delta_alpha(
        log_likelihoods, state.alpha, config.ess_target, config.min_delta_alpha, config.ess_tolerance,
    )
    alpha = state.alpha + delta
    if alpha >= 1.0 - _ALPHA_EPS:
        alpha = 1.0

    if state.scheme is Scheme.ANNEALED:
        return replace(state, alpha=alpha), delta
    if alpha == 1.0:
        return replace(state, assimilated=state.assimilated + 1, alpha=0.0), delta
    return replace(state, alpha=alpha), delta


def _mutate(
    cloud: ParticleCloud,
    context: InversionContext,
    state: TemperingState,
    config: SmcConfig,
    rng: np.random.Generator,
):
    """Shrinking-window MH stages until the batch acceptance rate reaches accept_low."""
    mutation = config.mutation
    n = cloud.n_particles
    log_priors = log_prior_rho(cloud.particles, context.kappa)
    current = np.array([
        tempered_log_target(lp, incs, state) for lp, incs in zip(log_priors, cloud.log_increments)
    ])

    window = mutation.window_start
    rates: List[float] = []
    for _ in range(mutation.max_stages):
        # one independent stream per particle, drawn at the barrier
        particle_seeds = rng.integers(0, 2 ** 63 - 1, size=n)
        accepted = 0
        for i in range(n):
            seen: Dict[bytes, Evaluation] = {}

            def particle_log_h(rho: np.ndarray) -> float:
                log_prior = log_prior_rho(rho, context.kappa)
                if not np.isfinite(log_prior):
                    return -np.inf
                evaluation = context.evaluate(rho)
                seen[rho.tobytes()] = evaluation
                return tempered_log_target(log_prior, evaluation.log_increments, state)

            result = mh_mutate(cloud.particles[i], particle_log_h, window, mutation.steps_per_stage,
                               particle_seeds[i], current_log_h=current[i])
            if result.accepted:
                evaluation = seen[result.rho.tobytes()]
                cloud.particles[i] = result.rho
                cloud.log_increments[i] = evaluation.log_increments
                if cloud.filter_outputs:
                    cloud.filter_outputs[i] = evaluation.filter_output
                current[i] = result.log_h
                accepted += result.accepted

        rate = accepted / (n * mutation.steps_per_stage)
        rates.append(rate)
        logger.debug(f"window {window:.4g}: acceptance {rate:.3f}")
        if rate >= mutation.accept_low:
            break
        window = max(window * mutation.window_decay, mutation.window_floor)
    return rates, window


def smc_run(
    context: InversionContext,
    scheme: Union[Scheme, str] = Scheme.ANNEALED,
    n_particles: int = 100,
    config: Optional[SmcConfig] = None,
    seed: SeedLike = None,
    on_generation: Optional[Callable[[TraceRecord], None]] = None,
) -> SmcResult:
    """
    Run the sampler until the tempering path is complete.

    The returned cloud is uniformly weighted and approximates p(rho | y); its
    filter outputs are kept for the Rao-Blackwellized estimators.
    """
    if n_particles < 2:
        raise ConfigurationError(f"N_p must be at least 2, got {n_particles}")
    config = config or SmcConfig(kappa=context.kappa)
    scheme = Scheme(scheme)
    rng = np.random.default_rng(seed)
    num_stages = context.num_stages

    particles = sample_prior_rho(rng, n_particles, context.dimension, context.kappa)
    log_increments, outputs = _evaluate_cloud(context, particles)
    cloud = ParticleCloud(particles, np.zeros(n_particles), log_increments, outputs)
    state = TemperingState.initial(scheme)
    trace: List[TraceRecord] = []
    log_evidence = 0.0
    logger.info(f"SMC start: scheme={scheme.value} N_p={n_particles} d={context.dimension} K_f={num_stages}")

    while not state.is_complete(num_stages):
        started = time.perf_counter()
        forced = cloud.generation + 1 >= config.max_generations
        if forced:
            logger.warning(f"generation cap {config.max_generations} reached, forcing the last step")
        new_state, delta = _next_state(state, cloud, config, forced)

        with np.errstate(invalid="ignore"):
            log_weights = loglik_part(cloud.log_increments, new_state) - loglik_part(cloud.log_increments, state)
        log_weights = np.where(np.isnan(log_weights), -np.inf, log_weights)
        if not np.any(np.isfinite(log_weights)):
            raise DegeneracyError(f"all weights vanished at generation {cloud.generation + 1}", trace=trace)

        ess = effective_sample_size(log_weights)
        log_evidence += float(logsumexp(log_weights) - np.log(n_particles))
        indices = systematic_resample(log_weights, rng)
        kill_fraction = 1.0 - np.unique(indices).size / n_particles
        cloud = cloud.take(indices)
        cloud.generation += 1
        state = new_state

        rates, window = _mutate(cloud, context, state, config, rng)

        record = TraceRecord(
            generation=cloud.generation,
            scheme=scheme.value,
            alpha=1.0 if (scheme is not Scheme.ANNEALED and state.alpha == 0.0) else state.alpha,
            assimilated=state.assimilated,
            progress=state.progress(num_stages),
            delta_alpha=delta,
            ess=ess,
            kill_fraction=kill_fraction,
            acceptance_rates=rates,
            final_window=window,
            wall_time=time.perf_counter() - started,
        )
        trace.append(record)
        if on_generation is not None:
            on_generation(record)
        logger.debug(f"generation {record.generation}: progress={record.progress:.4f} ess={ess:.1f}")

    logger.info(f"SMC done: {cloud.generation} generations, log evidence {log_evidence:.4f}")
    return SmcResult(cloud=cloud, trace=trace, log_evidence=log_evidence, scheme=scheme)
