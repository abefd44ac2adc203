"""Concept-bottleneck estimation of sleep apnea severity from oximetry."""

__version__ = "0.1.0"

from .concepts import compute_concepts, detect_desaturations, reference_ahi
from .core import (CONCEPT_NAMES, ClinicalFeatures, ConceptVector, EventKind,
                   OximetrySignal, RespiratoryEvent, SeverityClass, SleepStudy, severity)
from .preprocess import OximetryPreprocessor, PreprocessConfig, preprocess_pipeline
from .regressor import MLPAHIRegressor, RegressorConfig
from .slam import RidgeConceptRegressor, SlamConfig, SlamRegressor
from .synth import SynthConfig, generate_cohort, generate_study

__all__ = [
    "CONCEPT_NAMES", "ClinicalFeatures", "ConceptVector", "EventKind",
    "MLPAHIRegressor", "OximetryPreprocessor", "OximetrySignal", "PreprocessConfig",
    "RegressorConfig", "RespiratoryEvent", "RidgeConceptRegressor", "SeverityClass",
    "SleepStudy", "SlamConfig", "SlamRegressor", "SynthConfig", "__version__",
    "compute_concepts", "detect_desaturations", "generate_cohort", "generate_study",
    "preprocess_pipeline", "reference_ahi", "severity",
]
