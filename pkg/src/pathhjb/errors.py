"""Exception hierarchy shared by every module of the package."""


class PathHJBError(Exception):
    """Base class for all package errors."""


class InvalidInputError(PathHJBError, ValueError):
    """An argument violates an operation's precondition."""


class InvalidSpecError(PathHJBError, ValueError):
    """A model definition is inconsistent."""


class InvalidConfigError(PathHJBError, ValueError):
    """A run configuration failed validation.

    ``violations`` holds every problem found, not only the first one.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class EvaluationError(PathHJBError, ArithmeticError):
    """A coefficient or field returned a non-finite value."""

    def __init__(self, message, t=None, control=None):
        self.t = t
        self.control = control
        super().__init__(message)


class UnsupportedFieldError(PathHJBError, TypeError):
    """A random field lacks a derivative the operation needs."""


class ResourceError(PathHJBError, RuntimeError):
    """A node cap or enumeration budget would be exceeded."""


class DivergenceError(PathHJBError, ArithmeticError):
    """A simulated state left the divergence guard."""

    def __init__(self, message, step=None, paths=None):
        self.step = step
        self.paths = paths
        super().__init__(message)
