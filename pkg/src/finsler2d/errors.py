"""Exception hierarchy shared by every module of the toolkit."""

from __future__ import annotations


class FinslerError(Exception):
    """Base class for all toolkit errors."""


# jet arithmetic
class DivisionByZeroValue(FinslerError, ZeroDivisionError):
    pass


class DomainError(FinslerError, ValueError):
    pass


class OrderMismatch(FinslerError, ValueError):
    pass


class DegreeExceedsOrder(FinslerError, ValueError):
    pass


# expressions
class ExprSyntaxError(FinslerError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownIdentifier(ExprSyntaxError):
    pass


class UnboundConstant(FinslerError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


# metrics
class MalformedSpec(FinslerError, ValueError):
    pass


class SingularDirection(FinslerError):
    pass


class DegenerateConic(FinslerError):
    pass


class DegenerateCubic(FinslerError):
    pass


class ImplicitSolveFailed(FinslerError):
    pass


class DomainSingularity(FinslerError):
    pass


# analysis
class ZeroMetricValue(FinslerError):
    pass


class NotProjectiveAtPoint(FinslerError):
    pass


class BZeroOnGrid(FinslerError):
    pass


class IntegrationLeftDomain(FinslerError):
    pass


# geodesics
class DegenerateTensor(FinslerError):
    pass


class ImmediateSingularity(FinslerError):
    pass


class DegenerateChord(FinslerError):
    pass


# cli
class UnknownSystem(FinslerError, ValueError):
    pass


class KindMismatch(FinslerError, ValueError):
    pass
