"""Exception hierarchy. CLI exit codes are attached to each category."""


class RiskgradError(Exception):
    exit_code = 1


class ContractError(RiskgradError, ValueError):
    """A precondition of an operation was violated by the caller."""

    exit_code = 3


class ShapeError(ContractError):
    exit_code = 3


class ConfigError(RiskgradError, ValueError):
    exit_code = 2


class ConvergenceError(RiskgradError, RuntimeError):
    exit_code = 4


class TrainingAborted(RiskgradError, RuntimeError):
    """Raised after a checkpoint was written because a loss went non-finite."""

    exit_code = 5

    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
