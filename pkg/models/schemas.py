"""
Pydantic models for every serialized document
"""
from __future__ import annotations

from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from config.presets import PROPERTIES
from config.settings import settings


def training_split_sizes(num_samples: int, holdout_fraction: float) -> Tuple[int, int]:
    """(fitting, held-out) sample counts for a surrogate training set"""
    cut = int(round(num_samples * (1.0 - holdout_fraction)))
    return cut, num_samples - cut


def training_split_shortfall(num_samples: int, state_dim: int, holdout_fraction: float) -> Optional[str]:
    """Why num_samples cannot support a surrogate fit, or None when it can."""
    fitting, held = training_split_sizes(num_samples, holdout_fraction)
    if fitting < state_dim + 2:
        return f"fitting split of {fitting} samples needs at least 4N + 2 = {state_dim + 2}"
    if held < 2:
        return f"holdout split of {held} samples needs at least 2"
    return None

class AreaLayout(BaseModel):
    """Zones grouped into contiguous material areas"""
    area_sizes: List[int] = Field(..., description="Number of zones in each area, in zone order")

    @field_validator("area_sizes")
    @classmethod
    def _non_empty_areas(cls, sizes: List[int]) -> List[int]:
        if not sizes:
            raise ValueError("layout needs at least one area")
        if any(size < 1 for size in sizes):
            raise ValueError(f"every area must hold at least one zone, got {sizes}")
        return sizes

    @classmethod
    def from_zone_area(cls, zone_area: List[int]) -> "AreaLayout":
        """Build from a zone -> area map; areas must be contiguous and numbered in order."""
        sizes: List[int] = []
        for position, area in enumerate(zone_area):
            if area == len(sizes) - 1:
                sizes[-1] += 1
            elif area == len(sizes):
                sizes.append(1)
            else:
                raise ValueError(f"zone {position} breaks area contiguity (area {area})")
        return cls(area_sizes=sizes)

    @property
    def num_zones(self) -> int:
        return sum(self.area_sizes)

    @property
    def num_areas(self) -> int:
        return len(self.area_sizes)

    @property
    def zone_area(self) -> List[int]:
        return [area for area, size in enumerate(self.area_sizes) for _ in range(size)]

    @property
    def state_dim(self) -> int:
        return len(PROPERTIES) * self.num_zones


class FrequencyGrid(BaseModel):
    values: List[float] = Field(..., description="Frequencies in GHz, strictly increasing")

    @field_validator("values")
    @classmethod
    def _increasing(cls, values: List[float]) -> List[float]:
        if not values:
            raise ValueError("frequency grid is empty")
        if values[0] <= 0:
            raise ValueError("frequencies must be positive")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("frequencies must be strictly increasing")
        return values

    @classmethod
    def regular(cls, f_min: float, f_max: float, count: int) -> "FrequencyGrid":
        return cls(values=np.linspace(f_min, f_max, count).tolist())

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


class ReferenceTable(BaseModel):
    """Per-area reference values tabulated on a frequency axis, linearly interpolated"""
    frequencies: List[float]
    values: Dict[str, List[List[float]]] = Field(
        ..., description="property -> [area][frequency] reference value"
    )

    @model_validator(mode="after")
    def _consistent(self) -> "ReferenceTable":
        missing = set(PROPERTIES) - set(self.values)
        if missing:
            raise ValueError(f"reference table misses properties {sorted(missing)}")
        for prop, rows in self.values.items():
            for row in rows:
                if len(row) != len(self.frequencies):
                    raise ValueError(f"{prop}: row of length {len(row)} for {len(self.frequencies)} frequencies")
        return self

    def profiles(self, frequencies: np.ndarray) -> np.ndarray:
        """Interpolated reference values, shape (4, N_a, K_f)."""
        axis = np.asarray(self.frequencies, dtype=float)
        return np.stack([
            np.stack([np.interp(frequencies, axis, row) for row in self.values[prop]])
            for prop in PROPERTIES
        ])


class PriorSpec(BaseModel):
    """Spatial prior N(m_k, P_k) at every frequency stage"""
    layout: AreaLayout
    frequencies: FrequencyGrid
    references: ReferenceTable
    rho_s: float = Field(default=0.95, ge=0.0, lt=1.0, description="Spatial correlation")
    sigma_floor: float = Field(default=1.0, gt=0.0, description="Minimum prior standard deviation")
    sigma_slope: float = Field(default=0.15, ge=0.0, description="Std increase per unit of reference value")

    @model_validator(mode="after")
    def _areas_match(self) -> "PriorSpec":
        for prop, rows in self.references.values.items():
            if len(rows) != self.layout.num_areas:
                raise ValueError(f"{prop}: {len(rows)} reference rows for {self.layout.num_areas} areas")
        sigma = self.sigma_floor + self.sigma_slope * self.reference_profiles()
        if np.any(sigma <= 0):
            raise ValueError("prior standard deviations must stay positive")
        return self

    @property
    def num_freqs(self) -> int:
        return len(self.frequencies)

    def reference_profiles(self) -> np.ndarray:
        """(4, N_a, K_f) reference values on the frequency grid."""
        return self.references.profiles(self.frequencies.as_array())


class PerturbationShape(BaseModel):
    """Frequency profile Lambda(f) added to the reference, scaled per area"""
    kind: Literal["constant", "sinusoid", "step", "ramp", "composite"] = "sinusoid"
    amplitude: float = 1.0
    cycles: float = Field(default=1.0, description="Oscillations across the band (sinusoid)")
    phase: float = 0.0
    step_at: Optional[float] = Field(default=None, description="Discontinuity position in GHz")
    jump: float = Field(default=0.0, description="Height of the optional discontinuity")
    components: List["PerturbationShape"] = Field(default_factory=list)

    def evaluate(self, frequencies: np.ndarray) -> np.ndarray:
        f = np.asarray(frequencies, dtype=float)
        span = max(f[-1] - f[0], np.finfo(float).eps)
        u = (f - f[0]) / span
        if self.kind == "constant":
            out = np.full_like(f, self.amplitude)
        elif self.kind == "sinusoid":
            out = self.amplitude * np.sin(2.0 * np.pi * self.cycles * u + self.phase)
        elif self.kind == "ramp":
            out = self.amplitude * u
        elif self.kind == "step":
            edge = self.step_at if self.step_at is not None else 0.5 * (f[0] + f[-1])
            out = self.amplitude * (f >= edge).astype(float)
        else:
            out = np.zeros_like(f)
            for component in self.components:
                out = out + component.evaluate(f)
        if self.jump and self.kind != "step":
            edge = self.step_at if self.step_at is not None else 0.5 * (f[0] + f[-1])
            out = out + self.jump * (f >= edge)
        return out


PerturbationShape.model_rebuild()


class ScenarioSpec(BaseModel):
    """Nondestructive-testing scenario: prior, truth model, forward model, noise, seeds"""
    prior: PriorSpec
    perturbations: Dict[str, PerturbationShape]
    area_perturbations: Dict[int, Dict[str, PerturbationShape]] = Field(default_factory=dict)
    scale_factors: List[float]
    noise_std: float = Field(default=1e-3, gt=0.0)
    obs_dim: int = Field(default=12, ge=1)
    gamma: float = Field(default=0.0, ge=0.0, description="Weight of the forward-model nonlinearity")
    coupling: float = Field(default=0.0, ge=0.0, lt=1.0, description="mu'/eps'' column mixing")
    training_samples: Optional[int] = Field(default=None, description="N_S, default 10 (4N + 1)")
    truth_source: Literal["perturbation", "prior"] = "perturbation"
    truth_rho: float = Field(default=0.9, ge=0.0, le=1.0)
    rho_mode: Literal["scalar", "area", "area_property"] = "area_property"
    scheme: Literal["annealed", "data_tempered", "hybrid"] = "annealed"
    n_particles: int = Field(default=100, ge=2)
    model_seed: int = 11
    truth_seed: int = 13
    data_seed: int = 17
    smc_seed: int = 19

    @model_validator(mode="after")
    def _consistent(self) -> "ScenarioSpec":
        num_areas = self.prior.layout.num_areas
        if len(self.scale_factors) != num_areas:
            raise ValueError(f"{len(self.scale_factors)} scale factors for {num_areas} areas")
        missing = set(PROPERTIES) - set(self.perturbations)
        if missing:
            raise ValueError(f"perturbations miss properties {sorted(missing)}")
        for area in self.area_perturbations:
            if not 0 <= area < num_areas:
                raise ValueError(f"perturbation override for unknown area {area}")
        if self.training_samples is not None:
            shortfall = training_split_shortfall(
                self.training_samples, self.prior.layout.state_dim, settings.SURROGATE_HOLDOUT
            )
            if shortfall:
                raise ValueError(f"training_samples = {self.training_samples}: {shortfall}")
        return self

    @property
    def num_training_samples(self) -> int:
        if self.training_samples is not None:
            return self.training_samples
        return 10 * (self.prior.layout.state_dim + 1)

    def shape_for(self, prop: str, area: int) -> PerturbationShape:
        return self.area_perturbations.get(area, {}).get(prop, self.perturbations[prop])


class MutationConfig(BaseModel):
    """
    Window schedule of the reflected random-walk kernel.

    Each stage runs steps_per_stage moves per particle; while the acceptance
    rate stays below accept_low the window shrinks by window_decay, down to
    window_floor. There is no upper acceptance bound: a rate above 0.5 ends
    the schedule like any rate at or above accept_low, since shrinking the
    window would only raise it further.
    """
    steps_per_stage: int = Field(default=5, ge=1)
    window_start: float = Field(default=0.5, gt=0.0)
    window_decay: float = Field(default=0.5, gt=0.0, lt=1.0)
    window_floor: float = Field(default=1e-3, gt=0.0)
    max_stages: int = Field(default=20, ge=1)
    accept_low: float = Field(default=0.2, ge=0.0, le=1.0)

    @classmethod
    def from_settings(cls) -> "MutationConfig":
        return cls(
            steps_per_stage=settings.MH_STEPS_PER_STAGE,
            window_start=settings.MH_WINDOW_START,
            window_decay=settings.MH_WINDOW_DECAY,
            window_floor=settings.MH_WINDOW_FLOOR,
            max_stages=settings.MH_MAX_STAGES,
            accept_low=settings.MH_ACCEPT_LOW,
        )


class SmcConfig(BaseModel):
    ess_target: float = Field(default=0.75, gt=0.0, lt=1.0)
    ess_tolerance: float = Field(default=0.02, gt=0.0)
    min_delta_alpha: float = Field(default=1e-6, gt=0.0)
    max_generations: int = Field(default=500, ge=1)
    kappa: float = Field(default=3.0, description="Prior marginal p(rho_i) ~ exp(kappa rho_i)")
    mutation: MutationConfig = Field(default_factory=MutationConfig)

    @classmethod
    def from_settings(cls, **overrides) -> "SmcConfig":
        values = dict(
            ess_target=settings.SMC_ESS_TARGET,
            ess_tolerance=settings.SMC_ESS_TOLERANCE,
            min_delta_alpha=settings.SMC_MIN_DELTA_ALPHA,
            max_generations=settings.SMC_MAX_GENERATIONS,
            kappa=settings.PRIOR_RHO_KAPPA,
            mutation=MutationConfig.from_settings(),
        )
        values.update(overrides)
        return cls(**values)


class TraceRecord(BaseModel):
    """One SMC generation"""
    generation: int
    scheme: str
    alpha: float = Field(..., description="Annealing exponent, or partial exponent of the current stage")
    assimilated: int = Field(default=0, description="Observations fully assimilated")
    progress: float = Field(..., description="Fraction of the tempering path covered")
    delta_alpha: float
    ess: float
    kill_fraction: float
    acceptance_rates: List[float]
    final_window: float
    wall_time: float


class SummaryHeader(BaseModel):
    """Header written next to xhat.csv / sigma.csv"""
    state_order: str = "eps_re zones, eps_im zones, mu_re zones, mu_im zones"
    num_zones: int
    state_dim: int
    frequencies: List[float]
    n_particles: int
    rho_mode: str
    scheme: str
    seed: int
    log_evidence: Optional[float] = None
    has_covariances: bool = False


class SurrogateHeader(BaseModel):
    num_stages: int
    state_dim: int
    obs_dim: int
    noise_std: float
    storage: Literal["json", "binary"]


class AnalysisReport(BaseModel):
    """Statistical performance study result"""
    kind: Literal["stochastic_variation", "average_precision"]
    runs: int
    shape: List[int]
    seeds: List[int]
    mean_xhat: List[List[float]]
    mean_sigma: List[List[float]]
    rms_xhat: Optional[List[List[float]]] = None
    rms_sigma: Optional[List[List[float]]] = None
    rmse: Optional[List[List[float]]] = None
    baseline_rmse: Optional[List[List[float]]] = None
    summary: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _non_negative(self) -> "AnalysisReport":
        for name in ("mean_sigma", "rms_xhat", "rms_sigma", "rmse", "baseline_rmse"):
            value = getattr(self, name)
            if value is not None and np.any(np.asarray(value) < 0):
                raise ValueError(f"{name} holds negative entries")
        if any(value < 0 for value in self.summary.values()):
            raise ValueError("summary statistics must be non-negative")
        return self
