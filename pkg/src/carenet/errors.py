"""Exception types shared across the package.

The CLI maps these onto process exit codes: DataError -> 3,
NumericalError -> 4. Anything else is a bug.
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class DataError(PipelineError):
    """Malformed inputs: bad shapes, bad labels, unreadable or corrupt files."""


class NumericalError(PipelineError):
    """Degenerate or divergent numerics: constant spectra, zero variance, NaN loss."""
