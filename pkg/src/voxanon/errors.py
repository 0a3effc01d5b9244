"""Exception hierarchy for the toolkit.

Anything user-facing (CLI, file loaders) raises one of these so the
command layer can map failures to exit codes; numerical internals raise
the narrower signal types which batch pipelines catch per frame or per
utterance.
"""


class VoxanonError(Exception):
    """Base class for all toolkit errors."""


class FormatError(VoxanonError):
    """Malformed input file (broken RIFF header, bad SAEB magic, ...)."""


class UnsupportedFormatError(VoxanonError):
    """File parses but uses an encoding we do not handle."""


class ValidationError(VoxanonError):
    """Input data violates a documented contract."""


class SchemaError(ValidationError):
    """Tabular input is missing required columns."""


class ConfigurationError(VoxanonError):
    """Inconsistent processing configuration (e.g. non-COLA framing)."""


class DegenerateFrameError(VoxanonError):
    """Frame carries no usable signal (all zeros); callers bypass it."""


class NumericalError(VoxanonError):
    """An iterative numerical routine failed to converge."""


class StabilityError(VoxanonError):
    """Filter has a pole on or outside the unit circle."""


class SamplingExhaustedError(VoxanonError):
    """Rejection sampler hit its attempt budget without an accept."""


class UndefinedBaselineError(VoxanonError):
    """Distinctiveness ratio has a zero denominator."""


class UndefinedCorrelationError(VoxanonError):
    """Pearson correlation requested on a constant sequence."""
