"""Data models module"""
from .schemas import *

__all__ = [
    'AreaLayout',
    'FrequencyGrid',
    'ReferenceTable',
    'PriorSpec',
    'PerturbationShape',
    'ScenarioSpec',
    'MutationConfig',
    'SmcConfig',
    'TraceRecord',
    'SummaryHeader',
    'SurrogateHeader',
    'AnalysisReport',
]
