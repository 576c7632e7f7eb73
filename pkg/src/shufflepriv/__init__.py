"""Shuffle-model private uniformity testing: protocols, calibration and audits."""

from shufflepriv.errors import (
    AmplificationInvalidError,
    CalibrationError,
    InvalidParameterError,
    MalformedTranscriptError,
    TruncationError,
)
from shufflepriv.probcore import DiscreteDistribution, Histogram, RandomSource

__all__ = [
    "AmplificationInvalidError",
    "CalibrationError",
    "DiscreteDistribution",
    "Histogram",
    "InvalidParameterError",
    "MalformedTranscriptError",
    "RandomSource",
    "TruncationError",
]

__version__ = "0.1.0"
