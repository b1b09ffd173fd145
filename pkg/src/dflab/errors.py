"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class TrainingFailureError(RuntimeError):
    """Training diverged (non-finite loss); carries per-term diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, truncated, or otherwise unreadable."""


class RoleMismatchError(CheckpointError):
    """Checkpoint exists but holds a different network role."""


class SchedulingFailureError(RuntimeError):
    """Minibatch scheduler cannot supply enough distinct classes."""


class ContractViolationError(RuntimeError):
    """A runtime invariant that must hold by construction was broken."""


class UndefinedMetricError(ValueError):
    """Metric has no defined value for the given input (e.g. no relevant items)."""


class GradientCheckError(RuntimeError):
    """Finite-difference gradient validation hit non-finite values."""
