"""Trajectory inference with mean-field Langevin particles coupled by Schrodinger bridges."""
from .errors import (
    ConfigError,
    DivergenceError,
    EvaluationError,
    InputError,
    MFLError,
    ParseError,
    SamplingError,
)
from .kernels import BACKEND
from .types import (
    AnnealingSchedule,
    GrowthPrior,
    IntervalSpec,
    MarginalState,
    ProblemConfig,
    Snapshot,
    SnapshotSeries,
    delta_t_weights,
    derive_intervals,
)

__version__ = "0.1.0"
