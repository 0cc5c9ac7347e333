"""
Scenario Service
Ground truth, simulated observations and surrogate preparation for a ScenarioSpec
"""
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from config.presets import DEFAULT_PERTURBATIONS, DESK_PRESET, FULL_PRESET, PROPERTIES, default_reference_values, get_perturbation
from core.armodel import CorrelationParam, PriorMoments, RhoMode, build_dynamics, prior_moments, rho_dimension
from core.lgss import SeedLike
from core.surrogate import (
    ForwardModel,
    SurrogateModel,
    SyntheticForwardModel,
    TrainingSet,
    fit_surrogate,
    sample_training_set,
)
from models.schemas import AreaLayout, FrequencyGrid, PerturbationShape, PriorSpec, ReferenceTable, ScenarioSpec
from utils.exceptions import DimensionMismatchError
from utils.logger import setup_logger
from utils.numerics import draw_gaussian

logger = setup_logger(__name__)


def build_scenario_spec(desk: bool = True, **overrides) -> ScenarioSpec:
    """
    Scenario from the desk or full-scale preset.

    Keyword overrides go to the ScenarioSpec fields (noise_std, gamma, seeds...).
    """
    preset = DESK_PRESET if desk else FULL_PRESET
    layout = AreaLayout(area_sizes=list(preset["area_sizes"]))
    prior = PriorSpec(
        layout=layout,
        frequencies=FrequencyGrid.regular(preset["f_min"], preset["f_max"], preset["num_freqs"]),
        references=ReferenceTable(**default_reference_values(layout.num_areas)),
        rho_s=preset["rho_s"],
    )
    values = dict(
        prior=prior,
        perturbations={prop: PerturbationShape(**get_perturbation(name))
                       for prop, name in DEFAULT_PERTURBATIONS.items()},
        scale_factors=list(preset["scale_factors"]),
        noise_std=preset["noise_std"],
        obs_dim=preset["obs_dim"],
        n_particles=preset["n_particles"],
        rho_mode=preset["rho_mode"],
    )
    values.update(overrides)
    return ScenarioSpec(**values)


def build_truth(spec: ScenarioSpec) -> np.ndarray:
    """x_true(f) = x_ref(f) + c(area) Lambda(f) per component, shape (4N, K_f)."""
    prior = spec.prior
    freqs = prior.frequencies.as_array()
    reference = prior.reference_profiles()
    rows = []
    for p, prop in enumerate(PROPERTIES):
        for area, size in enumerate(prior.layout.area_sizes):
            offset = spec.scale_factors[area] * spec.shape_for(prop, area).evaluate(freqs)
            rows.extend([reference[p, area] + offset] * size)
    return np.stack(rows)


def draw_prior_truth(
    spec: ScenarioSpec,
    rho: Optional[float] = None,
    seed: SeedLike = None,
    moments: Optional[PriorMoments] = None,
) -> np.ndarray:
    """One trajectory of the AR prior with every rho component at the given value, shape (4N, K_f)."""
    rho = spec.truth_rho if rho is None else rho
    seed = spec.truth_seed if seed is None else seed
    mode = RhoMode(spec.rho_mode)
    param = CorrelationParam(values=np.full(rho_dimension(mode, spec.prior.layout), rho), mode=mode)
    dynamics = build_dynamics(spec.prior, param, moments)
    rng = np.random.default_rng(seed)

    path = np.empty((spec.prior.num_freqs, spec.prior.layout.state_dim))
    path[0] = draw_gaussian(rng, dynamics.init.mean, dynamics.init.cov)
    for k in range(spec.prior.num_freqs - 1):
        mean = dynamics.trans_matrices[k] @ path[k] + dynamics.trans_offsets[k]
        path[k + 1] = draw_gaussian(rng, mean, dynamics.trans_noise_covs[k])
    return path.T.copy()


def simulate_observations(
    spec: ScenarioSpec,
    x_true: np.ndarray,
    model,
    seed: SeedLike = None,
    noise_std: Optional[float] = None,
) -> np.ndarray:
    """
    y_k = model(x_true[:, k]) + N(0, sigma_n^2 I), shape (K_f, obs_dim).

    model is anything exposing evaluate(x, k): a ForwardModel or a SurrogateModel.
    """
    x_true = np.asarray(x_true, dtype=float)
    expected = (spec.prior.layout.state_dim, spec.prior.num_freqs)
    if x_true.shape != expected:
        raise DimensionMismatchError(f"x_true shape {x_true.shape}, expected {expected}")
    if model.state_dim != expected[0] or model.num_stages != expected[1]:
        raise DimensionMismatchError("observation model does not match the scenario")
    sigma = spec.noise_std if noise_std is None else noise_std
    rng = np.random.default_rng(spec.data_seed if seed is None else seed)
    noiseless = np.stack([model.evaluate(x_true[:, k], k) for k in range(expected[1])])
    return noiseless + sigma * rng.standard_normal(noiseless.shape)


@dataclass
class PreparedScenario:
    """A scenario with its forward model, fitted surrogate and reference truth"""
    spec: ScenarioSpec
    forward: ForwardModel
    training: Optional[TrainingSet]
    surrogate: SurrogateModel
    moments: PriorMoments

    def truth(self, seed: SeedLike = None) -> np.ndarray:
        if self.spec.truth_source == "prior":
            return draw_prior_truth(self.spec, seed=seed, moments=self.moments)
        return build_truth(self.spec)

    def observations(self, x_true: np.ndarray, seed: SeedLike = None,
                     noise_std: Optional[float] = None) -> np.ndarray:
        return simulate_observations(self.spec, x_true, self.forward, seed, noise_std)


class ScenarioService:
    """Builds forward model, training set and surrogate for scenarios"""

    def __init__(self, holdout_fraction: Optional[float] = None, prune_threshold: Optional[float] = None):
        self.holdout_fraction = holdout_fraction
        self.prune_threshold = prune_threshold
        self._cache: Dict[str, PreparedScenario] = {}
        logger.info("Scenario service initialized")

    def forward_model(self, spec: ScenarioSpec, moments: Optional[PriorMoments] = None) -> SyntheticForwardModel:
        return SyntheticForwardModel(
            num_stages=spec.prior.num_freqs,
            state_dim=spec.prior.layout.state_dim,
            obs_dim=spec.obs_dim,
            gamma=spec.gamma,
            coupling=spec.coupling,
            seed=spec.model_seed,
            input_moments=moments or prior_moments(spec.prior),
        )

    def train(self, spec: ScenarioSpec, moments: Optional[PriorMoments] = None):
        """Training set and fitted surrogate; seeds derive from model_seed."""
        moments = moments or prior_moments(spec.prior)
        forward = self.forward_model(spec, moments)
        training_seed = int(np.random.SeedSequence(spec.model_seed).generate_state(1)[0])
        training = sample_training_set(forward, spec.prior, spec.num_training_samples, training_seed, moments)
        surrogate = fit_surrogate(training, spec.noise_std, self.holdout_fraction, self.prune_threshold)
        return forward, training, surrogate

    def prepare(self, spec: ScenarioSpec, surrogate: Optional[SurrogateModel] = None) -> PreparedScenario:
        """Forward model and surrogate for spec; a given surrogate skips training."""
        if surrogate is not None:
            moments = prior_moments(spec.prior)
            return PreparedScenario(spec, self.forward_model(spec, moments), None, surrogate, moments)
        key = spec.model_dump_json()
        if key not in self._cache:
            moments = prior_moments(spec.prior)
            forward, training, surrogate = self.train(spec, moments)
            self._cache[key] = PreparedScenario(spec, forward, training, surrogate, moments)
            logger.info(
                f"Scenario prepared: N={spec.prior.layout.num_zones} N_a={spec.prior.layout.num_areas} "
                f"K_f={spec.prior.num_freqs} obs_dim={spec.obs_dim}"
            )
        return self._cache[key]
