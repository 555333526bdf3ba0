from .base import DeterministicModel
from .analytic import KinkModel, NoisyWrapper, OracleError, reference_integral

__all__ = [
    "DeterministicModel",
    "KinkModel",
    "NoisyWrapper",
    "OracleError",
    "reference_integral",
]
