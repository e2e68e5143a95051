"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or out-of-domain argument."""


class ValidationError(ValueError):
    """A model or tree failed a structural check."""


class ConfigError(ValueError):
    """Unusable experiment or model configuration."""


class NoDecisionError(ArithmeticError):
    """A test cannot decide because one of its inputs is infinite."""


class UnsupportedError(ValueError):
    """The requested operation is not defined for this state space."""


class ReconstructionFailure(RuntimeError):
    """The cherry-picking reconstruction aborted at a given level.

    ``level`` is the cohort level at which the failure happened and
    ``reason`` a short machine-readable tag.
    """

    def __init__(self, level: int, reason: str, detail: str = ""):
        self.level = level
        self.reason = reason
        self.detail = detail
        msg = f"level {level}: {reason}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class TrialTimeout(RuntimeError):
    """Raised cooperatively when a trial exceeds its wall-clock budget."""
