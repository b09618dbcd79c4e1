"""Exception types raised across the simulator."""


class ContractViolation(ValueError):
    """An argument broke a documented precondition (shape, range, ...)."""


class SolverFailure(ArithmeticError):
    """Hermitian solve hit a non-positive pivot."""

    def __init__(self, pivot, message=None):
        self.pivot = int(pivot)
        super().__init__(message or f"matrix is not positive definite (pivot {self.pivot})")


class DegenerateChannel(ValueError):
    """Channel matrix carries no energy; SNR calibration is undefined."""


class ConstructionFailure(RuntimeError):
    """LDPC construction did not produce a valid full-rank code."""


class NumericalConsistencyError(ArithmeticError):
    """A quantity that is analytically bounded left its range."""
