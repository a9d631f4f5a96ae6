"""Exception hierarchy.

Every error belongs to one of three families, which the CLI maps onto exit
codes: usage (1), data/format (2) and numeric failure (3).
"""

from __future__ import annotations


class SestError(Exception):
    exit_code = 2


class UsageError(SestError):
    exit_code = 1


class DataError(SestError):
    exit_code = 2


class NumericError(SestError):
    exit_code = 3


class _IndexedError(DataError):
    def __init__(self, index: int, detail: str = "") -> None:
        self.index = index
        msg = f"event {index}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


# event_core
class OutOfBounds(_IndexedError):
    pass


class NonMonotonicTimestamp(_IndexedError):
    pass


class BadPolarity(_IndexedError):
    pass


class InvalidBinning(UsageError):
    pass


class InvalidWindow(UsageError):
    pass


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class InvariantViolation(DataError):
    pass


# esim
class NonFiniteInput(NumericError):
    pass


class TooFewFrames(DataError):
    pass


class NonIncreasingTimestamps(DataError):
    pass


class GeometryMismatch(DataError):
    pass


# metrics / shapes
class ShapeMismatch(DataError):
    pass


class ZeroVariance(NumericError):
    pass


class EmptyFixations(DataError):
    pass


class NoNegatives(DataError):
    pass


# tensor engine
class BadAxis(UsageError):
    pass


class KernelTooLarge(DataError):
    pass


class BadSize(UsageError):
    pass


class BadSigma(UsageError):
    pass


class NotScalarLoss(UsageError):
    pass


class DetachedNode(UsageError):
    pass


class NonFiniteValue(NumericError):
    pass


class MissingGradient(UsageError):
    pass


# model / training
class WindowMismatch(UsageError):
    pass


class NonFiniteActivation(NumericError):
    pass


class RangeViolation(NumericError):
    pass


class EmptyDataset(DataError):
    pass


class DivergedLoss(NumericError):
    pass


class ConfigError(UsageError):
    pass
