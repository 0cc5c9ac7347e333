"""Scenario, study and export services"""
from .scenario_service import ScenarioService
from .export_service import export_profiles
from .study_service import run_average_precision_study, run_stochastic_variation_study

__all__ = [
    'ScenarioService',
    'export_profiles',
    'run_average_precision_study',
    'run_stochastic_variation_study',
]
