"""Exception types shared by every corrgarment module.

Most errors are ValueError subclasses so callers that only know about
ValueError (the CLI, quick scripts) keep working.
"""

from __future__ import annotations

from typing import Optional


class CorrGarmentError(Exception):
    """Base class for all corrgarment failures."""


class ConfigError(CorrGarmentError, ValueError):
    """A configuration section violates its invariants."""


class GarmentSpecError(CorrGarmentError, ValueError):
    """A garment spec is invalid or produces an unusable mesh."""


class SimulationError(CorrGarmentError, ValueError):
    """Simulation input is malformed (non-finite state, bad step parameters, ...)."""


class MeshMismatchError(CorrGarmentError, ValueError):
    """Two objects that must derive from the same garment mesh do not."""


class VisibilityError(CorrGarmentError, ValueError):
    """Nothing visible where something must be (empty render, hidden annotation)."""


class CounterpartInvisible(CorrGarmentError):
    """Skip signal: the traced counterpart of a probe point is not observed."""


class NonFiniteActivation(CorrGarmentError, RuntimeError):
    """A network layer produced NaN or Inf."""

    def __init__(self, layer: int, message: str = ""):
        self.layer = layer
        super().__init__(message or f"Non-finite activation at layer {layer}")


class DivergenceError(CorrGarmentError, RuntimeError):
    """A training loss became non-finite."""

    def __init__(self, message: str, dump_path: Optional[str] = None):
        self.dump_path = dump_path
        if dump_path:
            message = f"{message} (batch dump: {dump_path})"
        super().__init__(message)


class CheckpointError(CorrGarmentError, ValueError):
    """A checkpoint file is corrupt or unreadable."""


class ConfigMismatchError(CheckpointError):
    """A checkpoint was written for a different model configuration."""


class DatasetError(CorrGarmentError, ValueError):
    """A training dataset is too small or inconsistent for the requested sampling."""
