"""
Scenario presets and reference profiles
Single source of truth for property naming and default scenario values
"""
import math

# State vector blocks, in order: eps', eps'', mu', mu''
PROPERTIES = ("eps_re", "eps_im", "mu_re", "mu_im")

# CLI scheme names -> internal scheme names
SCHEME_ALIASES = {
    "annealed": "annealed",
    "tempered": "data_tempered",
    "data_tempered": "data_tempered",
    "hybrid": "hybrid",
}

RHO_MODES = ("scalar", "area", "area_property")

# Full-scale study: 19 zones in 5 areas, 20 frequencies, 23 angles x 4 polarizations
FULL_PRESET = {
    "area_sizes": [3, 4, 4, 4, 4],
    "f_min": 0.2,
    "f_max": 8.0,
    "num_freqs": 20,
    "obs_dim": 92,
    "scale_factors": [0.5, 1.0, 2.0, 4.0, 8.0],
    "noise_std": 1e-3,
    "rho_s": 0.95,
    "n_particles": 100,
    "rho_mode": "area_property",
}

# Desk scale keeps every structural feature while running in minutes
DESK_PRESET = {
    "area_sizes": [2, 2],
    "f_min": 0.2,
    "f_max": 8.0,
    "num_freqs": 6,
    "obs_dim": 12,
    "scale_factors": [0.5, 2.0],
    "noise_std": 1e-3,
    "rho_s": 0.95,
    "n_particles": 100,
    "rho_mode": "area_property",
}

# Reference profiles are tabulated on this axis (GHz) and linearly interpolated
REFERENCE_AXIS = [0.2 + 0.2 * i for i in range(40)]


def _eps_re(area: int, f: float) -> float:
    return 3.0 + 1.5 * area - 0.08 * f


def _eps_im(area: int, f: float) -> float:
    return 0.4 + 0.3 * area + 0.12 * f


def _mu_re(area: int, f: float) -> float:
    return 1.0 + 0.6 * area + 1.2 * math.exp(-f / 3.0)


def _mu_im(area: int, f: float) -> float:
    return 0.2 + (0.5 + 0.4 * area) * math.exp(-f / 4.0)


_REFERENCE_FUNCTIONS = {
    "eps_re": _eps_re,
    "eps_im": _eps_im,
    "mu_re": _mu_re,
    "mu_im": _mu_im,
}


def default_reference_values(num_areas: int) -> dict:
    """
    Regular, non-negative profiles below 20, one row per area.

    Returns:
        {"frequencies": [...], "values": {property: [[...] per area]}}
    """
    return {
        "frequencies": list(REFERENCE_AXIS),
        "values": {
            prop: [[round(fn(area, f), 12) for f in REFERENCE_AXIS] for area in range(num_areas)]
            for prop, fn in _REFERENCE_FUNCTIONS.items()
        },
    }


# Lambda(f) presets, from regular to irregular
PERTURBATION_PRESETS = {
    "smooth": {"kind": "sinusoid", "amplitude": 1.0, "cycles": 0.5},
    "oscillatory": {"kind": "sinusoid", "amplitude": 1.0, "cycles": 2.2},
    "step": {"kind": "step", "amplitude": 1.0},
    "ramp": {"kind": "ramp", "amplitude": 1.0},
    "composite": {
        "kind": "composite",
        "components": [
            {"kind": "sinusoid", "amplitude": 0.6, "cycles": 1.0},
            {"kind": "ramp", "amplitude": 0.5},
            {"kind": "sinusoid", "amplitude": 0.3, "cycles": 3.0, "jump": 0.4},
        ],
    },
}

# Per-property shape used by default scenarios
DEFAULT_PERTURBATIONS = {
    "eps_re": "smooth",
    "eps_im": "ramp",
    "mu_re": "composite",
    "mu_im": "step",
}


def get_perturbation(name: str) -> dict:
    """Get a perturbation preset by name"""
    return PERTURBATION_PRESETS[name]
