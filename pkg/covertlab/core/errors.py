"""Exception hierarchy shared by the engines, the pipeline graph and the CLI.

Every error carries a ``stage`` tag (set by whoever raises it or by the pipeline
node that catches it) and the process exit code the CLI should use.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSERTION = 3
EXIT_NUMERIC = 4


class CovertLabError(Exception):
    exit_code = EXIT_CONFIG

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.message = message
        self.stage = stage

    def with_stage(self, stage: str) -> "CovertLabError":
        if self.stage is None:
            self.stage = stage
        return self

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": self.message, "stage": self.stage}


class ConfigError(CovertLabError):
    exit_code = EXIT_CONFIG


class AssertionFailure(CovertLabError):
    exit_code = EXIT_ASSERTION


class NumericError(CovertLabError):
    exit_code = EXIT_NUMERIC


class QuadratureError(NumericError):
    def __init__(self, message: str, achieved: float, requested: float, stage: str | None = None):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e}, requested {requested:.3e})", stage)
        self.achieved = achieved
        self.requested = requested


class InfeasibleMask(NumericError):
    pass


class SlacknessTooLarge(NumericError):
    pass


class QuantileDomain(NumericError):
    pass


class GridTooCoarse(NumericError):
    pass


class BudgetExceeded(ConfigError):
    pass


class NoGoodSubcode(AssertionFailure):
    pass


class CodebookIndexError(ConfigError):
    pass


class CodebookFormatError(ConfigError):
    pass
