"""Exception hierarchy used across the package."""


class MFLError(Exception):
    """Base class for all package errors."""


class ConfigError(MFLError, ValueError):
    """Invalid configuration or problem setup."""


class InputError(MFLError, ValueError):
    """Numerically invalid input (non-finite costs, overflowing tilts)."""


class ParseError(MFLError, ValueError):
    """Malformed input file."""


class DivergenceError(MFLError, FloatingPointError):
    """A particle position became non-finite during optimization."""


class EvaluationError(MFLError, ValueError):
    """Incompatible inputs to an evaluation metric."""


class SamplingError(MFLError, ValueError):
    """A sampling request cannot be satisfied."""
