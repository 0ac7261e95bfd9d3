"""Exception hierarchy shared across the package.

CLI exit-code mapping: ``ValidationError`` and subclasses mean bad input
(exit 2); ``SolverError`` and anything else mean an internal failure (exit 1).
"""


class GamefaceError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GamefaceError, ValueError):
    """An input violates a documented precondition or invariant."""


class ParseError(ValidationError):
    """A file could not be parsed. Carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SolverError(GamefaceError, RuntimeError):
    """A numerical solve failed or did not converge."""
