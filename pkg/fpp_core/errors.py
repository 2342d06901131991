# fpp_core/errors.py
from typing import Any, Dict, Optional


class FPPError(Exception):
    """Base class for every error raised by the lab."""


class BoundsError(FPPError):
    """Coordinates outside the supported range or outside a window."""


class DomainError(FPPError):
    """An operation was called outside its domain (wrong root, missing path, ...)."""


class DegenerateInputError(FPPError):
    """Input too small or too regular to produce a meaningful estimate."""


class DegenerateFitError(DegenerateInputError):
    """Least-squares fit requested on samples that do not span the plane."""


class FitError(FPPError):
    """Not enough points for a log-log fit."""


class RetryNeeded(FPPError):
    """The realized random structure is unusable; retry with other parameters."""

    def __init__(self, message: str, realized: int = 0):
        super().__init__(message)
        self.realized = realized


class CostGuardError(FPPError):
    """A configured size cap would be exceeded."""


class ConfigError(FPPError):
    """Invalid run configuration. `field` names the offending key or line."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field

    def __str__(self) -> str:
        base = super().__str__()
        return f"{self.field}: {base}" if self.field else base


class TrialFailure(FPPError):
    """A Monte Carlo trial raised; carries the seed needed to replay it."""

    def __init__(self, trial_index: int, seed: int, cause: BaseException):
        super().__init__(
            f"trial {trial_index} (seed={seed}) failed: {type(cause).__name__}: {cause}"
        )
        self.trial_index = trial_index
        self.seed = seed
        self.cause = cause

    def to_dict(self) -> Dict[str, Any]:
        return {
            "success": False,
            "trial_index": self.trial_index,
            "seed": self.seed,
            "error": str(self.cause),
        }
