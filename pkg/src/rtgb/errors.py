"""Exception types raised across the package."""


class DimensionError(ValueError):
    """An array does not have the size its model requires."""

    def __init__(self, axis, expected, actual):
        self.axis = axis
        self.expected = expected
        self.actual = actual
        super().__init__(f"dimension mismatch on {axis}: expected {expected}, got {actual}")


class EnumerationLimitError(ValueError):
    """Exact enumeration was requested for too many hidden units."""

    def __init__(self, n_hidden, limit):
        self.n_hidden = n_hidden
        self.limit = limit
        super().__init__(
            f"refusing exact enumeration over {n_hidden} hidden units (limit {limit}, 2^{n_hidden} states)"
        )


class FormatError(ValueError):
    """A binary file is malformed. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class RuleParseError(ValueError):
    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class DivergenceError(FloatingPointError):
    """Training produced a non-finite parameter."""

    def __init__(self, epoch, sequence, parameter):
        self.epoch = epoch
        self.sequence = sequence
        self.parameter = parameter
        super().__init__(f"non-finite values in {parameter} after epoch {epoch}, sequence {sequence}")
