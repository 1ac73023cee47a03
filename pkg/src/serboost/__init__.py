"""Explainability-driven iterative feature boosting for speech emotion recognition."""
from .errors import DataError, InvariantError, SerBoostError

__version__ = "0.1.0"

__all__ = ["DataError", "InvariantError", "SerBoostError", "__version__"]
