"""Exception types shared across the package."""


class FvsimError(Exception):
    """Base class for all package errors."""


class ConfigError(FvsimError):
    """A parameter or configuration value violates its contract."""


class BudgetTooSmall(ConfigError):
    """Chunk bit budget cannot give every frame at least one bit."""


class IncompleteAllocation(FvsimError):
    """Allocation sequence is missing a chunk or a view entry."""


class InvalidView(FvsimError):
    """View index outside 1..n_views."""


class DuplicateFrame(FvsimError):
    """A frame with this (view, rep, pts) was already pushed."""


class OutOfOrderFrame(FvsimError):
    """Frame PTS regressed below the buffer's pruned base."""


class StarvedBuffer(FvsimError):
    """Session needs a PTS the buffer has not fully received yet."""


class IncompleteLog(FvsimError):
    """An event has no subsequent emission to measure against."""


class DecodabilityViolation(FvsimError):
    """An emitted stream failed the decodability check."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = violations or []


class ShapeError(FvsimError):
    """Array arguments disagree in shape."""


class NonFiniteValue(FvsimError):
    """NaN or infinity where a finite number is required."""


class InsufficientHistory(FvsimError):
    """Not enough observed chunks to build a training sample."""


class ParseError(FvsimError):
    """A file does not conform to its documented schema."""
