# -*- coding: utf-8 -*-

"""
lob_cusum.errors
================
This module contains the set of lob_cusum exceptions.
"""
from typing import Any, Optional


class LobCusumError(Exception):
    """Base class for exceptions in lob_cusum"""

    pass


class MalformedRow(LobCusumError):
    """Raised when an input row cannot be parsed or breaks a row invariant"""

    def __init__(self, line: int, reason: str = "malformed row") -> None:
        self.line = line
        super().__init__(f"Line {line}: {reason}.")


class NonMonotoneTime(MalformedRow):
    """Raised when timestamps go backwards in an input file"""

    def __init__(self, line: int, reason: str = "timestamp decreases") -> None:
        super().__init__(line, reason)


class CrossedBook(MalformedRow):
    """Raised when the best bid is not strictly below the best ask"""

    def __init__(self, line: int, reason: str = "best bid >= best ask") -> None:
        super().__init__(line, reason)


class MissingSnapshot(LobCusumError):
    """Raised when a trade print has no pre-trade book"""

    def __init__(self, timestamp: int) -> None:
        self.timestamp = timestamp
        super().__init__(f"No book snapshot precedes trade at ts_ns={timestamp}.")


class StaleState(LobCusumError):
    """Raised when an intensity state is queried before its last update"""

    pass


class UnstableParams(LobCusumError):
    """Raised when Hawkes parameters violate the stability condition"""

    pass


class NonPositiveIntensity(LobCusumError):
    """Raised when the ground intensity vanishes at an observed event"""

    pass


class Nonconvergence(LobCusumError):
    """Raised when likelihood maximization stops before converging"""

    def __init__(
        self, message: str, params: Any = None, diagnostics: Optional[Any] = None
    ) -> None:
        self.params = params
        self.diagnostics = diagnostics
        super().__init__(message)


class InvalidRho(LobCusumError):
    """Raised when the intensity ratio is outside its admissible range"""

    pass


class KinkPoint(LobCusumError):
    """Raised when a derivative of the scale function is requested at a kink"""

    pass


class TimeRegression(LobCusumError):
    """Raised when a detector is stepped backwards in time"""

    pass


class InsufficientData(LobCusumError):
    """Raised when a statistic needs more observations than given"""

    pass


class ConfigError(LobCusumError):
    """Raised on invalid run configuration"""

    pass
