"""Exceptions raised by the samplers, densities and harness.

Everything derives from AdpError so the HTTP layer and the CLI can report
domain failures uniformly. Precondition failures are also ValueErrors.
"""

from typing import Any, Optional


class AdpError(Exception):
    pass


class InvalidParameter(AdpError, ValueError):
    pass


class NegativeTime(InvalidParameter):
    pass


class ReversedInterval(InvalidParameter):
    pass


class ParseError(InvalidParameter):
    """A spec file or request body violates a documented invariant."""


class QuadratureNonConvergence(AdpError):
    pass


class MissingMajorant(AdpError):
    pass


class MajorantUnavailable(AdpError):
    pass


class ThinningExhausted(AdpError):
    pass


class ZeroRateAtArrival(AdpError):
    def __init__(self, index: int, time: float):
        super().__init__(f"rate is zero at arrival {index} (t={time!r})")
        self.index = index
        self.time = time


class ZeroProbabilityEvent(AdpError):
    pass


class UnknownState(AdpError):
    pass


class ZeroTotalRate(AdpError):
    pass


class AllRatesZero(AdpError):
    pass


class DegeneratePmf(AdpError):
    pass


class BoundViolation(AdpError):
    pass


class DivergenceDetected(AdpError):
    def __init__(self, message: str, last_good: Optional[Any] = None, step: int = 0):
        super().__init__(message)
        self.last_good = last_good
        self.step = step
