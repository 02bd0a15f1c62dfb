"""Tunable three-body loss of Rydberg polaritons: band structure, effective
interactions, golden-rule loss rates, few-photon propagation and time-tag
correlations."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConvergenceError,
    MemoryBudgetError,
    PoleError,
    ResonanceError,
    RydlossError,
    TrackingError,
    TruncationError,
    ValidationError,
    WindowError,
)
from .medium import (  # noqa: E402
    DerivedScales,
    MediumParams,
    derive_scales,
    from_experiment_units,
    load_config,
    load_preset,
)

__all__ = [
    "ConvergenceError", "DerivedScales", "MediumParams", "MemoryBudgetError", "PoleError",
    "ResonanceError", "RydlossError", "TrackingError", "TruncationError", "ValidationError",
    "WindowError", "__version__", "derive_scales", "from_experiment_units", "load_config",
    "load_preset",
]
