"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid or inconsistent scenario/command configuration."""


class ModelRangeError(ValueError):
    """Geometry outside the validity range of the selected pathloss model."""


class GeometryError(ValueError):
    """Degenerate geometry (node on the panel plane, zero-length baseline)."""


class IdentifiabilityError(ValueError):
    """Pilot schedule too short to identify all channel components."""


class SingularChannelError(ArithmeticError):
    """Compound channel too ill-conditioned for zero forcing.

    Carries the condition estimate that triggered the rejection.
    """

    def __init__(self, condition: float, message: str | None = None):
        self.condition = float(condition)
        super().__init__(message or f"channel Gram matrix condition {condition:.3e} exceeds threshold")


class NonConvergenceError(RuntimeError):
    """Phase optimizer could not make progress. Carries the trace so far."""

    def __init__(self, message: str, trace=None):
        self.trace = trace
        super().__init__(message)
