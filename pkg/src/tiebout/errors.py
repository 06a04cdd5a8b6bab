"""Exception types shared across the package.

Every error carries a short machine-readable ``code`` so the CLI can emit
structured diagnostics and map failures to exit statuses.
"""


class TieboutError(Exception):
    code = "error"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = dict(details)

    def to_dict(self):
        return {"code": self.code, "message": str(self), **self.details}


class SupportEmptyError(TieboutError):
    code = "support-empty"


class RejectionRateExceededError(TieboutError):
    code = "rejection-rate-exceeded"


class ZeroSizeCommunityError(TieboutError):
    code = "zero-size-community"


class SingularPointError(TieboutError):
    code = "singular-point"


class AssumptionViolatedError(TieboutError):
    code = "assumption-violated"


class Assumption2UnverifiedError(TieboutError):
    code = "assumption-2-unverified"


class EmptyCommunityMeanError(TieboutError):
    code = "empty-community-mean"


class EmptyBorderError(TieboutError):
    code = "empty-border"


class DegenerateGradientError(TieboutError):
    code = "degenerate-gradient"


class NoConvergenceError(TieboutError):
    code = "no-convergence"


class CyclingDetectedError(TieboutError):
    code = "cycling-detected"

    def __init__(self, message, cycle=(), **details):
        super().__init__(message, **details)
        self.cycle = list(cycle)


class NoFullyLabeledCellError(TieboutError):
    code = "no-fully-labeled-cell"


class EmptyFeasibleSetError(TieboutError):
    code = "empty-feasible-set"


class NonSeparableModelError(TieboutError):
    code = "non-separable-model"


class ConfigError(TieboutError):
    code = "config-invalid"
