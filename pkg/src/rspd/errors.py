"""Exception hierarchy shared by every module of the package."""


class RspdError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ContractViolation(RspdError, ValueError):
    """An argument broke an operation's precondition (shape, sign, domain)."""

    exit_code = 2


class ConfigurationError(RspdError, ValueError):
    """Solver or experiment configuration is inconsistent.

    ``violations`` lists every offending field so a caller can report all of
    them at once instead of failing on the first.
    """

    exit_code = 2

    def __init__(self, message, violations=None):
        self.violations = list(violations) if violations else [message]
        if violations:
            message = message + ":\n  - " + "\n  - ".join(self.violations)
        super().__init__(message)


class InvalidAccuracyError(ConfigurationError):
    """Target accuracy is not strictly below the initial accuracy."""


class DegenerateProblemError(RspdError, ValueError):
    """The data make the problem ill-posed (e.g. a single-class dataset)."""

    exit_code = 3


class ParseError(RspdError, ValueError):
    """Malformed libsvm input. ``line`` is 1-based, or None for file-level errors."""

    exit_code = 3

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalFailure(RspdError, ArithmeticError):
    """An iterative routine failed to converge or iterates became non-finite."""

    exit_code = 4

    def __init__(self, message, residual=None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)
