"""Causal feature selection for tropical-cyclone intensity-change regression."""
__version__ = "0.1.0"

from .errors import (CausalTCError, InputError, ParseError, RankDeficientError, TrainingError,
                     ValidationError)

__all__ = ["__version__", "CausalTCError", "InputError", "ParseError", "RankDeficientError",
           "TrainingError", "ValidationError"]
