"""Exception hierarchy shared by every module."""


class JumpviscError(Exception):
    """Base class for all library errors."""


class ConfigError(JumpviscError):
    """Invalid run configuration (key path recorded when known)."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key={key}")
        if line is not None:
            where.append(f"line={line}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


# expression language
class ExprError(JumpviscError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message, position, expected=None):
        self.position = position
        self.expected = expected
        detail = f" at position {position}"
        if expected:
            detail += f", expected {expected}"
        super().__init__(message + detail)


class UnknownIdentifier(ExprError):
    pass


class ArityError(ExprError):
    pass


class DomainError(ExprError):
    pass


class UnboundVariable(ExprError):
    pass


# numerics
class NumericError(JumpviscError):
    """Failures mapped to the numeric exit code by the CLI."""


class NonConvergentQuadrature(NumericError):
    pass


class DivergentTail(NumericError):
    pass


class ShellBudgetExceeded(NumericError):
    pass


class DimensionMismatch(JumpviscError):
    pass


class GradientDependentKernel(JumpviscError):
    pass


class AsymmetricHessian(JumpviscError):
    pass


class IndexOnBoxEdge(JumpviscError):
    pass


class QuadratureMismatch(JumpviscError):
    pass


class NonFiniteSample(NumericError):
    pass


class NonIntegrable(NumericError):
    pass


class UnboundedSearch(NumericError):
    pass


class CflViolation(NumericError):
    pass


class MaxIterExceeded(NumericError):
    """Raised with the best iterate so far attached."""

    def __init__(self, message, field=None, report=None):
        super().__init__(message)
        self.field = field
        self.report = report


class UnsupportedConfiguration(JumpviscError):
    pass


class HypothesisNotMet(JumpviscError):
    """A comparison-check precondition failed (not a comparison failure)."""

    def __init__(self, failed):
        self.failed = list(failed)
        super().__init__("hypotheses not met: " + "; ".join(self.failed))
