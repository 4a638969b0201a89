"""Exception hierarchy shared by all reachkit modules."""


class ReachError(Exception):
    """Base class for reachkit errors."""


class RankDeficient(ReachError, ArithmeticError):
    """The decoder Jacobian is (numerically) not of full column rank."""


class DuplicatePoint(ReachError, ValueError):
    """Two points coincide, so the reach ratio is 0/0."""


class EmptySampleSet(ReachError, ValueError):
    """No usable samples remain after discarding duplicates of the base point."""


class InsufficientSamples(ReachError, ValueError):
    """Fewer points than an operation needs."""


class DimensionMismatch(ReachError, ValueError):
    """Array shapes do not match the model or manifold dimensions."""


class NonFiniteLoss(ReachError, FloatingPointError):
    """A loss or activation overflowed to inf/nan during training."""


class NoConvergence(ReachError, RuntimeWarning):
    """No projection restart met its stopping rule."""


class ParseError(ReachError, ValueError):
    """A data or model file could not be parsed."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class RaggedRows(ParseError):
    """A CSV file has rows of differing lengths."""


class ConfigError(ReachError, ValueError):
    """A configuration file violates its schema."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
