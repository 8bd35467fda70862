"""Simulation and verification toolkit for jump-type stochastic differential equations."""

__version__ = "0.1.0"

from .measures import LayeredMeasure, estimate_alpha, measure_from_config  # noqa: E402
from .models import MODEL_NAMES, build_model  # noqa: E402
from .noise import NoiseRealization, coarsen, generate  # noqa: E402
from .sde import (  # noqa: E402
    ModelSpec,
    Path,
    SimulationError,
    TruncationParams,
    moment_check,
    simulate,
    simulate_ensemble,
    simulate_paths,
    uniqueness_experiment,
)

__all__ = [
    "__version__",
    "LayeredMeasure",
    "estimate_alpha",
    "measure_from_config",
    "MODEL_NAMES",
    "build_model",
    "NoiseRealization",
    "coarsen",
    "generate",
    "ModelSpec",
    "Path",
    "SimulationError",
    "TruncationParams",
    "moment_check",
    "simulate",
    "simulate_ensemble",
    "simulate_paths",
    "uniqueness_experiment",
]
