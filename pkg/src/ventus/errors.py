"""Exception hierarchy shared across the toolkit.

``ValidationError`` (and subclasses) mark bad user input or violated
contracts; anything else escaping the library is treated as an internal
failure by the CLI.
"""


class VentusError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(VentusError):
    """Input data or configuration violates a documented contract."""


class OutOfDomainError(ValidationError):
    """A location or index falls outside the grid it is snapped to."""


class FormatError(ValidationError):
    """A file does not conform to its declared on-disk format."""


class CoverageError(ValidationError):
    """A forecast bundle or lead grid has holes where values are required."""


class RankDeficientError(ValidationError):
    """A regression design matrix is rank deficient."""

    def __init__(self, message, collinear_columns=()):
        super().__init__(message)
        self.collinear_columns = tuple(collinear_columns)


class TrainingDivergedError(VentusError):
    """A training loop produced a non-finite loss."""

    def __init__(self, message, *, epoch=None, batch=None, step=None, parameter=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.step = step
        self.parameter = parameter
