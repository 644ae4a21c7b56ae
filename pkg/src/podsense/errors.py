"""Exception hierarchy.

Every error raised by this package derives from :class:`PodsenseError`.
Classes additionally derive from the closest built-in (``ValueError``,
``IndexError``, ...) so callers that do not know about podsense still get
sensible semantics.
"""

__all__ = [
    "PodsenseError",
    "InvalidInputError",
    "InvalidArgumentError",
    "InvalidConfigError",
    "IndexOutOfRangeError",
    "InfeasibleCandidatesError",
    "ResourceLimitError",
    "NumericalError",
    "IllConditionedError",
    "SingularNoiseError",
    "DegeneratePriorError",
    "StepInfeasibleError",
    "ZeroNormColumnError",
    "DataFormatError",
    "BadMagicError",
    "TruncatedFileError",
    "BadCsvCellError",
]


class PodsenseError(Exception):
    """Base class for all podsense errors."""


class InvalidInputError(PodsenseError, ValueError):
    """Input data violates a precondition (non-finite entries, bad shape)."""


class InvalidArgumentError(PodsenseError, ValueError):
    """A scalar argument is out of its documented range."""


class InvalidConfigError(PodsenseError, ValueError):
    """Configuration values are inconsistent or out of range."""


class IndexOutOfRangeError(PodsenseError, IndexError):
    """A point or sensor index is outside the valid range."""


class InfeasibleCandidatesError(PodsenseError, ValueError):
    """Too few eligible candidates remain for the requested selection."""


class ResourceLimitError(PodsenseError):
    """A guard against oversized dense or combinatorial work tripped."""


class NumericalError(PodsenseError, ArithmeticError):
    """A numerical routine failed (non-convergence, loss of definiteness)."""


class IllConditionedError(NumericalError):
    """A linear system exceeded the condition-number guard.

    The offending condition estimate is stored on ``cond``.
    """

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class SingularNoiseError(NumericalError):
    """The sensor noise covariance is singular.

    Usually means near-zero-fluctuation points entered the candidate set;
    check the low-RMS candidate exclusion.
    """


class DegeneratePriorError(NumericalError):
    """Prior amplitude variances contain (near-)zero entries.

    The Bayesian operators need the inverse prior covariance; lower the
    number of retained signal modes instead of regularizing.
    """


class StepInfeasibleError(NumericalError):
    """Every remaining candidate was skipped during one greedy step."""

    def __init__(self, message, step=None, diagnostics=None):
        super().__init__(message)
        self.step = step
        self.diagnostics = diagnostics or {}


class ZeroNormColumnError(PodsenseError, ZeroDivisionError):
    """A snapshot has zero norm, so its relative error is undefined."""


class DataFormatError(PodsenseError, ValueError):
    """A dataset file violates its documented format."""


class BadMagicError(DataFormatError):
    """A binary matrix file does not start with the expected magic bytes."""


class TruncatedFileError(DataFormatError):
    """A data file ends before the declared payload is complete."""


class BadCsvCellError(DataFormatError):
    """A CSV cell could not be parsed as a number."""
