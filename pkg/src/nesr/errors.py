"""Exception types shared across the package."""


class NesrError(Exception):
    """Base class for all package errors."""


class DimensionError(NesrError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(NesrError, ValueError):
    """Parameters or weights are inconsistent with the requested configuration."""


class DomainError(NesrError, ValueError):
    """An argument lies outside the operation's valid domain."""


class NonFiniteInputError(DomainError):
    """An operation that rejects NaN/Inf received one."""


class UsageError(NesrError, RuntimeError):
    """The API was called in a way it does not support."""


class FormatError(NesrError, ValueError):
    """A serialized file is malformed.

    ``offset`` is the byte position where decoding failed.
    """

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class NonFiniteLossError(NesrError, FloatingPointError):
    """Training produced a NaN or infinite loss."""
