"""Exception hierarchy shared by the solver, harness and CLI."""


class HisdError(Exception):
    """Base class for all solver errors."""


class ValidationError(HisdError, ValueError):
    """Input data (initial state, configuration, matrix) is malformed."""


class NumericalFailure(HisdError, ArithmeticError):
    """A runtime guard tripped during time stepping."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index

    def with_step(self, step_index):
        self.step_index = step_index
        return self

    def __str__(self):
        base = super().__str__()
        if self.step_index is None:
            return base
        return f"{base} (at step {self.step_index})"


class SingularMatrix(NumericalFailure):
    pass


class StepTooLarge(NumericalFailure):
    pass


class DegenerateDirection(NumericalFailure):
    pass


class ZeroVector(NumericalFailure):
    pass


class InvariantViolation(NumericalFailure):
    """Post-step constraint check failed beyond tolerance."""


class GridMismatch(HisdError, ValueError):
    """Coarse and reference time grids do not nest."""
