"""Exception types shared across the toolkit."""

from __future__ import annotations


class VapError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(VapError, ValueError):
    """Input violates a documented precondition."""


class StageError(VapError, RuntimeError):
    """A pipeline stage failed while processing a specific input."""

    def __init__(self, stage: str, source: str, cause: BaseException | None = None):
        self.stage = stage
        self.source = source
        self.cause = cause
        detail = f": {cause}" if cause is not None else ""
        super().__init__(f"stage '{stage}' failed on {source}{detail}")


class NumericalError(VapError, FloatingPointError):
    """Non-finite values appeared inside the network."""

    def __init__(self, where: str):
        self.where = where
        super().__init__(f"non-finite activations in {where}")


class TrainingDiverged(VapError, RuntimeError):
    """Training loss became non-finite; ``checkpoint`` holds the last good weights."""

    def __init__(self, epoch: int, checkpoint: object | None):
        self.epoch = epoch
        self.checkpoint = checkpoint
        super().__init__(f"training diverged in epoch {epoch}")
