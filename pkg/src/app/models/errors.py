"""Error hierarchy shared by the numerical services and the CLI.

Every error carries the process exit code the CLI reports for it.
"""


class RemosError(Exception):
    """Base class for all domain errors."""

    exit_code = 1


class ConfigError(RemosError):
    """Invalid or inconsistent settings."""

    exit_code = 3


class ScheduleError(RemosError, ValueError):
    """Invalid diffusion schedule range or step index."""

    exit_code = 3


class MotionFormatError(RemosError):
    """Malformed motion, constraint, or manifest file."""

    exit_code = 4


class SkeletonMismatchError(RemosError):
    """Two skeletons (or a file and a skeleton) do not agree."""

    exit_code = 4


class ShapeMismatchError(RemosError, ValueError):
    """Array or tensor shapes are incompatible."""

    exit_code = 4

    def __init__(self, what: str, expected: object, actual: object):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected shape {expected}, got {actual}")


class InvalidMotionError(RemosError, ValueError):
    """Motion data violates a type invariant (non-finite values, N < 2, ...)."""

    exit_code = 4


class InsufficientSamplesError(RemosError, ValueError):
    """Too few samples for a metric."""

    exit_code = 4


class CheckpointError(RemosError):
    """Checkpoint version mismatch, corruption, or wrong stage tag."""

    exit_code = 5


class NotFittedError(RemosError):
    """Sampling was requested from a model that was never trained."""

    exit_code = 5


class DivergenceError(RemosError):
    """Training produced a non-finite loss or gradient norm."""

    exit_code = 6
