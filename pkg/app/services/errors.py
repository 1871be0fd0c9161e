"""
Error types shared by every service.

Callers catch ShapeFieldError to handle anything raised by the library;
the CLI maps it to exit code 2.
"""

from typing import Optional


class ShapeFieldError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(ShapeFieldError, ValueError):
    """An argument violates an operation's precondition."""


class OutOfDomainError(InvalidArgumentError):
    """A field query lies outside the [-1, 1]^3 cube beyond the clamp tolerance."""


class InvalidStateError(ShapeFieldError, RuntimeError):
    """A tape or optimizer state does not match the forward pass it is used with."""


class ParseError(ShapeFieldError, ValueError):
    """Malformed text input. Always carries the 1-based line (or byte offset) at fault."""

    def __init__(
        self,
        message: str,
        line: Optional[int] = None,
        offset: Optional[int] = None,
        source: Optional[str] = None,
    ):
        self.line = line
        self.offset = offset
        self.source = source
        where = []
        if source:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class FormatError(ShapeFieldError, ValueError):
    """A binary file does not follow the expected layout."""
