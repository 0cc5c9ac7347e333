"""
Centralized Configuration Management
"""
from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Optional


class Settings(BaseSettings):
    """Library settings with environment variable support"""

    # Application
    APP_NAME: str = "RB-SMC Inversion"
    APP_VERSION: str = "1.0.0"

    # SMC sampler
    SMC_PARTICLES: int = 100
    SMC_SCHEME: str = "annealed"                # annealed, data_tempered or hybrid
    SMC_ESS_TARGET: float = 0.75                # kills around 25% of the cloud
    SMC_ESS_TOLERANCE: float = 0.02
    SMC_MIN_DELTA_ALPHA: float = 1e-6
    SMC_MAX_GENERATIONS: int = 500
    PRIOR_RHO_KAPPA: float = 3.0                # marginal p(rho_i) ~ exp(kappa * rho_i); 0 is uniform

    # Metropolis-Hastings mutation
    MH_STEPS_PER_STAGE: int = 5
    MH_WINDOW_START: float = 0.5
    MH_WINDOW_DECAY: float = 0.5
    MH_WINDOW_FLOOR: float = 1e-3
    MH_MAX_STAGES: int = 20
    MH_ACCEPT_LOW: float = 0.2

    # Numerics
    CONDITION_LIMIT: float = 1e14
    JITTER_SCALE: float = 1e-12
    ORACLE_MAX_DIM: int = 2000
    ROOT_EIGEN_FLOOR: float = 1e-12             # min/max eigenvalue ratio accepted for H_k^{-1}

    # Surrogate training
    SURROGATE_HOLDOUT: float = 0.2
    SURROGATE_PRUNE_T: Optional[float] = None   # t-statistic threshold, None disables pruning
    SURROGATE_JSON_MAX_ELEMENTS: int = 20000    # larger surrogates go to binary files

    # Performance
    MAX_WORKERS: int = 1

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "json"                    # json or text
    LOG_DIR: str = "logs"
    LOG_TO_FILE: bool = False

    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=True,
        extra="ignore"
    )

# Singleton instance
settings = Settings()
