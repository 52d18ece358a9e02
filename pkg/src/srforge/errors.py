"""Exception types shared across the toolkit."""


class SrforgeError(Exception):
    """Base class for all srforge errors."""


class InvalidArgumentError(SrforgeError, ValueError):
    """An argument violates an operation's precondition (shape, range, ...)."""


class DegenerateInputError(SrforgeError, ValueError):
    """Input is numerically degenerate (e.g. zero variance for NCC)."""


class PpmFormatError(SrforgeError, ValueError):
    """A PPM file could not be parsed.

    ``code`` identifies the failure: "magic", "header", "maxval", "truncated".
    """

    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


class WeightsFormatError(SrforgeError, ValueError):
    """A weights file could not be loaded.

    ``code`` identifies the failure: "magic", "version", "kind", "config",
    "count", "name", "shape", "truncated".
    """

    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


class SurrogateNumericsError(SrforgeError, ArithmeticError):
    """Kernel matrix stayed singular after jitter escalation."""


class TrainingDivergedError(SrforgeError, RuntimeError):
    """Training loss became non-finite; carries a diagnostic snapshot."""

    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot
