"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes of the arguments do not agree."""


class DomainError(ValueError):
    """An argument lies outside the domain where a function is defined."""


class ConvergenceError(RuntimeError):
    """An iterative method ran out of budget before reaching its tolerance."""

    def __init__(self, message, gap=float("nan")):
        super().__init__(f"{message} (last gap {gap:.3e})")
        self.gap = gap
