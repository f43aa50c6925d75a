"""Exception hierarchy shared by every stage of the pipeline."""


class DtfaError(Exception):
    """Base class for all package errors."""


class ParameterError(DtfaError, ValueError):
    """Invalid user-supplied parameter or configuration value."""


class StructuralError(DtfaError):
    """Inconsistent data structure (singular system, empty partition, ...)."""


class SaturationError(DtfaError):
    """Random sequential adsorption could not place the requested fibers.

    Attributes
    ----------
    placed : int
        Number of fibers placed before giving up.
    """

    def __init__(self, message, placed):
        super().__init__(message)
        self.placed = placed


class DiagnosticsError(DtfaError):
    """A consistency check on computed tensors failed beyond tolerance."""


class ConvergenceError(DtfaError):
    """Nonlinear iteration failed after all sub-stepping attempts."""


class RomFormatError(DtfaError):
    """ROM database file is corrupt, truncated or of an unknown version."""
