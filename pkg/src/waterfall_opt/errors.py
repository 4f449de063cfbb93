"""Exception types shared across modules.

The CLI maps these onto exit codes, so each carries a stable ``exit_code``.
"""


class WaterfallError(Exception):
    exit_code = 1


class FormatError(WaterfallError, ValueError):
    """Input file does not match the declared format."""

    exit_code = 2


class MissingArtifactError(WaterfallError, FileNotFoundError):
    exit_code = 3


class WaterfallValidationError(WaterfallError, ValueError):
    """A waterfall (or config) violates its constraints."""

    exit_code = 4

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class DimensionError(WaterfallError, ValueError):
    exit_code = 2


class InsufficientHistoryError(WaterfallError, ValueError):
    exit_code = 4


class EstimationError(WaterfallError, ValueError):
    exit_code = 4


class UndefinedWeightsError(WaterfallError, ValueError):
    exit_code = 4


class SearchSpaceTooLarge(WaterfallError, ValueError):
    exit_code = 4

    def __init__(self, size, cap):
        super().__init__(f"search space has {size:,} candidates, above the cap of {cap:,}")
        self.size = size
        self.cap = cap
