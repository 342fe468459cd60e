"""Exception hierarchy shared by every module."""


class UnlearnForgeError(Exception):
    """Base class for all errors raised by the package."""


class InvalidInputError(UnlearnForgeError, ValueError):
    """An argument violates an operation's preconditions (shapes, ranges, layouts)."""


class ConsistencyError(UnlearnForgeError, RuntimeError):
    """Internal state disagrees with itself, e.g. a trace built from other params."""


class DivergenceError(UnlearnForgeError, ArithmeticError):
    """A loss or gradient became non-finite.

    ``where`` names the offending parameter entry or learning rate.
    """

    def __init__(self, message: str, where: object = None):
        super().__init__(message)
        self.where = where


class UndefinedSimilarityError(InvalidInputError):
    pass


class DegenerateFitError(UnlearnForgeError, ValueError):
    pass


class ParseError(InvalidInputError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class ConfigError(InvalidInputError):
    """Config validation failure; ``field`` is the dotted path of the bad key."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class ArtifactNotFoundError(UnlearnForgeError, FileNotFoundError):
    pass
