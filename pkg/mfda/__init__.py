#!/usr/bin/env python3
"""mfda - multifidelity ensemble Kalman filtering with reduced-order control variates."""

__version__ = "0.1.0"

from mfda.config import ExperimentConfig
from mfda.ensemble import Ensemble, GaussianSampler
from mfda.errors import MfdaError
from mfda.mfenkf import TotalVariateTriple, mf_analysis, mf_forecast
from mfda.projection import ProjectionPair
from mfda.system import SystemInfo

__all__ = [
    "__version__",
    "Ensemble",
    "ExperimentConfig",
    "GaussianSampler",
    "MfdaError",
    "ProjectionPair",
    "SystemInfo",
    "TotalVariateTriple",
    "mf_analysis",
    "mf_forecast",
]
