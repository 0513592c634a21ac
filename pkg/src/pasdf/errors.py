"""Exception taxonomy shared by the library and the command-line front end."""
from __future__ import annotations


class PasdfError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(PasdfError, ValueError):
    """A caller-supplied parameter is out of its documented range."""


class InvalidInputError(PasdfError, ValueError):
    """Input data (cloud, mesh, file) violates a precondition."""


class CoarseAlignmentError(PasdfError, RuntimeError):
    """Feature-based coarse registration could not produce a hypothesis."""


class UndefinedMetricError(PasdfError, ValueError):
    """A metric is undefined for the given inputs (e.g. single-class labels)."""


class RepairFailedError(PasdfError, RuntimeError):
    """Isosurface extraction produced no usable surface."""


class TrainingDivergedError(PasdfError, RuntimeError):
    """A non-finite value appeared during optimisation.

    Carries enough context to locate the failure without a debugger.
    """

    def __init__(self, message: str, *, epoch: int, batch: int, param_norm: float) -> None:
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.param_norm = param_norm


class CheckpointMismatchError(PasdfError, RuntimeError):
    """A stored model does not match the architecture expected by the caller."""


class ConfigValidationError(PasdfError, ValueError):
    """A run configuration failed validation before any work started."""
