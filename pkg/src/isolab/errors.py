"""Exception types shared across the package."""


class IsolabError(Exception):
    pass


# field arithmetic

class CompositeModulus(IsolabError):
    pass


class UnsupportedSize(IsolabError):
    pass


class DivisionByZero(IsolabError, ZeroDivisionError):
    pass


class ContextMismatch(IsolabError):
    pass


class NoRoot(IsolabError):
    pass


# curves

class BoundExceeded(IsolabError):
    pass


class NotSupersingular(IsolabError):
    pass


class ExtensionTooLarge(IsolabError):
    pass


class NotTorsion(IsolabError):
    pass


class NotOnCurve(IsolabError):
    pass


# isogenies

class BadKernel(IsolabError):
    pass


class NotComposable(IsolabError):
    pass


class EmptyMessage(IsolabError):
    pass


# endomorphism representations

class NotDivisible(IsolabError):
    pass


class NotEndomorphism(IsolabError):
    pass


class PrecisionExhausted(IsolabError):
    """The CRT modulus pool cannot cover the required bound."""


class ScalarInput(IsolabError):
    pass


class DenominatorOrderClash(IsolabError):
    pass


# lattices / orders

class RankDeficient(IsolabError):
    pass


class NotIntegral(IsolabError):
    pass


class NotAnOrder(IsolabError):
    pass


# engine / reduction

class TableMissing(IsolabError):
    pass


class OracleFailure(IsolabError):
    pass


class ReductionFailure(IsolabError):
    pass


class PathNotFound(IsolabError):
    pass


class Timeout(IsolabError):
    """Iteration or wall-clock budget exhausted; carries diagnostics."""

    def __init__(self, msg, partial=None, diagnostics=None):
        super().__init__(msg)
        self.partial = partial
        self.diagnostics = diagnostics or {}


class NotACollision(IsolabError):
    pass


class UnknownCurve(IsolabError):
    pass
