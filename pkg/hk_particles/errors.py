"""Exception hierarchy shared by the library and the command line.

Each concrete error maps to one stable exit status of the CLI:

    ConfigError        → 2   (invalid parameters, unknown preset, bad config file)
    NumericalError     → 3   (nonfinite velocity, failed step)
    VerificationError  → 4   (a continuum / identity check did not pass)
"""


class HKError(Exception):
    """Base class for every error raised on purpose by hk_particles."""

    exit_code = 1


class ConfigError(HKError, ValueError):
    exit_code = 2


class NumericalError(HKError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step

    def __str__(self):
        base = super().__str__()
        if self.step is None:
            return base
        return f"{base} (step {self.step})"


class VerificationError(HKError):
    exit_code = 4

    def __init__(self, failed_checks):
        self.failed_checks = tuple(failed_checks)
        super().__init__("verification failed: " + ", ".join(self.failed_checks))
