"""Exception types shared across the package."""


class FlowLabError(Exception):
    """Base class for all package-specific errors."""


class NumericError(FlowLabError):
    """A computation produced or encountered non-finite / degenerate values.

    ``step`` carries the integrator step index when the failure occurred
    inside a trajectory loop, else None.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class InsufficientOverlapError(FlowLabError):
    """Kernel-weighted Monte-Carlo estimate has too little effective mass."""

    def __init__(self, message: str, ess: float):
        super().__init__(f"{message} (effective sample size {ess:.1f})")
        self.ess = ess


class InvalidStateError(FlowLabError):
    """An operation was called on a state that does not support it."""


class TrainingDivergedError(FlowLabError):
    """Training loss became non-finite."""

    def __init__(self, step: int):
        super().__init__(f"training diverged at step {step}")
        self.step = step


class ConfigError(FlowLabError):
    """A configuration file or value failed validation."""
