"""
Exception types. Each CLI-facing error carries the exit status app.py uses.
"""


class LabError(Exception):
    exit_status = 1


class ConfigError(LabError):
    exit_status = 2


class SchemaError(ConfigError):
    """Table or config file does not match the expected schema."""


class ResumeMismatchError(ConfigError):
    """Stored manifest was produced by a different configuration."""


class FitConvergenceError(LabError):
    exit_status = 3

    def __init__(self, message: str, best_fit=None):
        super().__init__(message)
        self.best_fit = best_fit


class OracleFailure(LabError):
    exit_status = 4

    def __init__(self, message: str, failing_seeds=()):
        super().__init__(message)
        self.failing_seeds = tuple(failing_seeds)


class InconsistentBranchError(LabError):
    """A forced measurement outcome has (numerically) zero probability."""


class ExactEnumerationRefused(LabError):
    """Too many measurement sites for exact 2^M branch enumeration."""


class SubsystemError(ValueError):
    pass
