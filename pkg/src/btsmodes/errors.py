"""Exception types raised across the package."""


class BTSError(Exception):
    """Base class for all errors raised by btsmodes."""


class NonPositiveDensity(BTSError, ValueError):
    pass


class GridMismatch(BTSError, ValueError):
    pass


class BadDimension(BTSError, ValueError):
    pass


class BadKnots(BTSError, ValueError):
    pass


class SingularSystem(BTSError, ArithmeticError):
    pass


class DegenerateFlat(BTSError, ArithmeticError):
    """The density is flat over a stretch of the scan grid (not a Morse function)."""


class BadBandwidth(BTSError, ValueError):
    pass


class BracketFailure(BTSError, ArithmeticError):
    pass


class ZeroVariance(BTSError, ArithmeticError):
    pass


class AllRemoved(BTSError, ValueError):
    pass


class InitInvalid(BTSError, ValueError):
    pass


class NonFinite(BTSError, ArithmeticError):
    pass


class DegenerateBandwidths(BTSError, ValueError):
    pass


class OutOfSupport(BTSError, ValueError):
    pass


class UnknownTestbed(BTSError, KeyError):
    pass


class EmDivergence(BTSError, ArithmeticError):
    pass


class StageError(BTSError):
    """A numerical failure inside one pipeline stage; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause
