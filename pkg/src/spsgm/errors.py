"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SpsgmError(Exception):
    exit_code = 1


class ConfigError(SpsgmError):
    exit_code = 2


class InvalidInputError(ConfigError, ValueError):
    pass


class InvalidConfigError(ConfigError, ValueError):
    pass


class InvalidIndexError(ConfigError, IndexError):
    pass


class DataError(SpsgmError):
    exit_code = 3


class UnsupportedLayoutError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericFailureError(SpsgmError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, step=None, time=None, iterations=None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.iterations = iterations


class TrainingFailureError(NumericFailureError):
    def __init__(self, message, iteration=None):
        super().__init__(message, step=iteration)
        self.iteration = iteration


class MissingArtifactError(ConfigError, FileNotFoundError):
    """A file the command depends on is absent; the message names the producer."""
