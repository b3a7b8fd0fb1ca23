"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class NanogridError(Exception):
    exit_code = 1

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step

    def __str__(self):
        message = super().__str__()
        if self.step is not None:
            return f"{message} (at step {self.step})"
        return message


class ConfigError(NanogridError):
    exit_code = 2


class ParameterError(NanogridError):
    exit_code = 2


class DataError(NanogridError):
    exit_code = 3


class IngestionError(DataError):
    pass


class GapError(DataError):
    pass


class ValidationError(DataError):
    pass


class ModelError(NanogridError):
    exit_code = 4


class ContractError(NanogridError):
    exit_code = 4


class BoundsError(NanogridError):
    exit_code = 4


class InfeasibleSessionError(NanogridError):
    exit_code = 4
