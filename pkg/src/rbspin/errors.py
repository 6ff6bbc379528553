"""Exception hierarchy.

The CLI maps :class:`ConfigError` to exit code 2 and :class:`SolverError`
to exit code 3.
"""


class RBSpinError(Exception):
    pass


class StructuralError(RBSpinError, ValueError):
    """Shape, dimension or Hermiticity mismatch."""


class DomainError(RBSpinError, ValueError):
    """Parameter point outside the declared domain box."""


class ConfigError(RBSpinError, ValueError):
    pass


class SolverError(RBSpinError, RuntimeError):
    """A truth solve failed and no fallback was available."""

    def __init__(self, message, mu=None):
        if mu is not None:
            message = f"{message} (mu={tuple(float(x) for x in mu)})"
        super().__init__(message)
        self.mu = mu


class ConditioningError(RBSpinError, ArithmeticError):
    def __init__(self, message, mu=None):
        if mu is not None:
            message = f"{message} (mu={tuple(float(x) for x in mu)})"
        super().__init__(message)
        self.mu = mu


class StateError(RBSpinError, RuntimeError):
    """Operation requested on a model that lacks the required data."""


class TrainingAborted(SolverError):
    """Greedy training stopped by a truth-solver failure; ``partial`` holds the model so far."""

    def __init__(self, message, mu=None, partial=None):
        super().__init__(message, mu)
        self.partial = partial
