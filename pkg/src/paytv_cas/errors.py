"""Exception types shared across the package."""


class CasError(Exception):
    """Base class for all simulator errors."""


class CodecError(CasError):
    """Malformed wire data."""


class LengthError(CodecError):
    pass


class SyncError(CodecError):
    pass


class FormatError(CodecError):
    pass


class DomainError(CasError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class DuplicateError(CasError):
    pass


class NotFoundError(CasError, KeyError):
    pass


class CapacityError(CasError):
    pass


class StateError(CasError):
    pass


class ClockError(CasError):
    """Logical clock moved backwards."""


class GapError(CasError):
    """Scrambled packet arrived with no matching keyslot loaded."""


class AuthError(CasError):
    """Card/receiver authentication failed; carries the status word."""

    def __init__(self, sw: int, step: str = ""):
        self.sw = sw
        self.step = step
        super().__init__(f"authentication failed at {step or 'unknown step'}: SW {sw:04X}")
