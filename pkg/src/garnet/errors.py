"""Exception hierarchy shared by every garnet module."""


class GarnetError(Exception):
    """Base class for all pipeline errors."""


class InputError(GarnetError, ValueError):
    """A caller passed data that violates an operation's precondition."""


class ConfigError(GarnetError, ValueError):
    """A configuration, dataset layout or spec is unusable."""


class NumericError(GarnetError, ArithmeticError):
    """NaN or infinity appeared where finite values are required."""


class ParseError(InputError):
    """A file could not be parsed.

    The message names the file and the byte offset where parsing failed.
    """

    def __init__(self, path, offset, message):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{self.path}: byte {offset}: {message}")
