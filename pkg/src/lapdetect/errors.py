"""Exception types shared across the package.

Every exception carries a short machine-readable ``code`` that the CLI
uses for the structured error JSON emitted on stderr.
"""

from __future__ import annotations


class LapdetectError(Exception):
    """Base class for all errors raised by this package."""

    code = "Error"

    def __init__(self, message: str, **context: object):
        super().__init__(message)
        self.context = context


class EmptyPromptError(LapdetectError):
    """A prompt has no scoreable tokens left after exclusions."""

    code = "EmptyPrompt"


class MalformedScoreError(LapdetectError):
    """A token log-probability is positive, NaN, or infinite.

    ``context`` carries ``position`` (1-based) and, where known,
    ``prompt_id``.
    """

    code = "MalformedScore"


class DuplicateIdError(LapdetectError):
    """The same prompt_id appears more than once in a batch."""

    code = "DuplicateId"


class UnparseableResponseError(LapdetectError):
    """No recognizable label in a model completion. Carries the raw text."""

    code = "UnparseableResponse"

    def __init__(self, message: str, raw_text: str = "", **context: object):
        super().__init__(message, **context)
        self.raw_text = raw_text


class AmbiguousTimestampError(LapdetectError):
    """A headline timestamp has no time-of-day component."""

    code = "AmbiguousTimestamp"


class ObservationDroppedError(LapdetectError):
    """An observation cannot be completed (e.g. no next-day return).

    Raised by scalar operations; batch builders catch it and record a
    reason-coded row in the drop log instead of failing.
    """

    code = "ObservationDropped"

    def __init__(self, message: str, reason: str, **context: object):
        super().__init__(message, **context)
        self.reason = reason


class DegenerateColumnError(LapdetectError):
    """A column has zero variance where variation is required. Names it."""

    code = "DegenerateColumn"

    def __init__(self, message: str, column: str = "", **context: object):
        super().__init__(message, **context)
        self.column = column


class InvalidSplitError(LapdetectError):
    """Sample-split windows overlap or are out of order."""

    code = "InvalidSplit"


class ConvergenceFailureError(LapdetectError):
    """Alternating projections did not reach tolerance within the sweep cap.

    ``context`` carries ``achieved`` (the residual reached) and ``sweeps``.
    """

    code = "ConvergenceFailure"


class CollinearDesignError(LapdetectError):
    """The regressor matrix is rank deficient.

    ``context['columns']`` names the dependent columns.
    """

    code = "CollinearDesign"

    def __init__(self, message: str, columns: tuple[str, ...] = (), **context: object):
        super().__init__(message, **context)
        self.columns = tuple(columns)


class ClusterCountError(LapdetectError):
    """Fewer than two clusters: cluster-robust variance is undefined."""

    code = "ClusterCountError"


class DegenerateFocalTermError(LapdetectError):
    """The residualized focal regressor has (numerically) zero variance."""

    code = "DegenerateFocalTerm"


class InputNotFoundError(LapdetectError):
    """A CLI input path does not exist."""

    code = "InputNotFound"


class BootstrapInstabilityWarning(UserWarning):
    """More than 1% of bootstrap replicates had to be redrawn."""
