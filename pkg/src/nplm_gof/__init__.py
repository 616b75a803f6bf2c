"""Kernel-based NPLM goodness-of-fit testing for generative models."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CalibrationError,
    DatasetParseError,
    FingerprintMismatch,
    InputError,
    NplmError,
    NumericalError,
)
from .types import (  # noqa: E402
    Dataset,
    Direction,
    NplmConfig,
    NullModel,
    TestReport,
    TrainedModel,
    ValidationSummary,
)

__all__ = [
    "__version__",
    "CalibrationError",
    "DatasetParseError",
    "FingerprintMismatch",
    "InputError",
    "NplmError",
    "NumericalError",
    "Dataset",
    "Direction",
    "NplmConfig",
    "NullModel",
    "TestReport",
    "TrainedModel",
    "ValidationSummary",
]
