"""Exception hierarchy.

Numerical failures (singular systems, degenerate plans) are kept apart from
configuration/schema problems so the CLI can map them to distinct exit codes.
"""


class EIVError(Exception):
    """Base class for all package errors."""


class NumericalError(EIVError):
    """A computation could not be completed for numerical reasons."""


class ConfigError(EIVError, ValueError):
    """Invalid user input: bad parameters, config documents or schemas."""


class DimensionError(ConfigError):
    """Array shapes do not agree."""


class ParameterError(ConfigError):
    """A scalar parameter is outside its admissible range."""


class EmptyDatasetError(ConfigError):
    pass


class SizeError(ConfigError):
    """Requested subsample size does not fit the dataset."""


class SchemaError(ConfigError):
    """A referenced CSV column is missing."""


class DegenerateColumnError(ConfigError):
    """A column has zero variance and cannot be standardized."""


class SingularSystemError(NumericalError):
    """A p x p system is numerically singular.

    Attributes
    ----------
    matrix : str
        Human-readable name of the offending matrix.
    rcond : float
        Reciprocal condition estimate (1-norm) at the time of failure.
    """

    def __init__(self, matrix, rcond, hint=None):
        self.matrix = matrix
        self.rcond = float(rcond)
        msg = f"{matrix} is numerically singular (rcond={self.rcond:.3e})"
        if hint:
            msg += f"; {hint}"
        super().__init__(msg)


class PilotFailureError(SingularSystemError):
    """The pilot subsample of a two-step fit produced a singular system."""


class DegeneratePlanError(NumericalError):
    """Sampling scores are all zero so no probability vector exists."""


class InsufficientReplicationError(EIVError, ValueError):
    """No record carries more than one replicate."""


class VarianceUnavailableError(EIVError):
    """A between-replicate variance was requested with a single replicate."""
