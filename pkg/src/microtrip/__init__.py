"""Stop-to-stop driving trajectory synthesis: data handling, a Markov-chain
baseline, two diffusion denoisers and evaluation metrics."""

from .core import (
    BOUNDARY_TOL,
    WINDOW,
    DegenerateInputError,
    InvalidTrajectoryError,
    MicroTrip,
    PaddedWindow,
    SpeedTrajectory,
    TripStats,
    derive_acceleration,
    derive_jerk,
    pad_or_truncate,
    trip_stats,
    validate_micro_trip,
)
from .ingest import Dataset, load_dataset, save_dataset

__version__ = "0.1.0"

__all__ = [
    "BOUNDARY_TOL",
    "WINDOW",
    "DegenerateInputError",
    "InvalidTrajectoryError",
    "MicroTrip",
    "PaddedWindow",
    "SpeedTrajectory",
    "TripStats",
    "derive_acceleration",
    "derive_jerk",
    "pad_or_truncate",
    "trip_stats",
    "validate_micro_trip",
    "Dataset",
    "load_dataset",
    "save_dataset",
    "__version__",
]
