"""Exception types shared across the engine."""


class IvosError(Exception):
    """Base class for all engine errors."""


class ValidationError(IvosError):
    """Input rejected before any computation (bad scribbles, bad dims)."""


class ContractViolation(IvosError):
    """A caller broke an internal precondition (shape/range mismatch)."""


class FormatError(IvosError):
    """A serialized artifact (embedding file, checkpoint, manifest) is unreadable."""


class EmptyReferenceError(IvosError):
    """A matching operation was asked to match against an empty pixel set."""
