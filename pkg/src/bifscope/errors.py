"""Exception hierarchy shared by all modules."""


class BifscopeError(Exception):
    pass


class ExprError(BifscopeError, ValueError):
    pass


class ExprSyntaxError(ExprError):
    """Malformed expression; ``offset`` is the 0-based character position."""

    def __init__(self, message, offset, expected=None):
        self.offset = offset
        self.expected = expected
        detail = f"{message} at offset {offset}"
        if expected:
            detail += f" (expected {expected})"
        super().__init__(detail)


class NonIntegerExponent(ExprSyntaxError):
    pass


class UnknownIdentifier(ExprSyntaxError):
    pass


class EvaluationPole(ExprError, ZeroDivisionError):
    pass


class NotRationalInZ(ExprError):
    pass


class FamilyError(BifscopeError, ValueError):
    pass


class DegenerateEverywhere(FamilyError):
    pass


class DegenerateParameter(BifscopeError, ValueError):
    pass


class NumericalError(BifscopeError, ArithmeticError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NewtonDivergence(NumericalError):
    pass


class PathNewtonFailure(NumericalError):
    pass


class MultiplierDegeneration(NumericalError):
    pass


class NonFinitePotential(NumericalError):
    pass


class ZeroMassVector(BifscopeError, ValueError):
    pass


class CertificationError(BifscopeError):
    pass


class AttractingLanding(CertificationError):
    pass


class TangentIntersection(CertificationError):
    pass


class NotRepelling(CertificationError):
    pass


class OutsideLinearizationDomain(CertificationError):
    pass
