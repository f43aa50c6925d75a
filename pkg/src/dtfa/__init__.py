"""Damage-aware transformation field analysis for fiber composites."""
from .errors import (ConvergenceError, DiagnosticsError, DtfaError,
                     ParameterError, RomFormatError, SaturationError,
                     StructuralError)

__version__ = "0.1.0"

__all__ = ["ConvergenceError", "DiagnosticsError", "DtfaError",
           "ParameterError", "RomFormatError", "SaturationError",
           "StructuralError", "__version__"]
