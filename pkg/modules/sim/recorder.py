"""Episode recording: UGMC trajectory file plus a JSON manifest."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from core.storage import write_json, write_trajectory
from modules.sim.state import SimState


class EpisodeRecorder:
    """Collects particle positions every ``stride`` steps.

    Use ``recorder.record`` as the step hook of a primitive; ``close`` appends
    the final state so the last frame is always the end of the episode.
    """

    def __init__(self, garment: str, seed: int, stride: int = 1):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.garment = garment
        self.seed = seed
        self.stride = stride
        self.frames: List[np.ndarray] = []
        self.actions: List[Dict[str, Any]] = []
        self._steps = 0
        self._last: Optional[SimState] = None

    def record(self, state: SimState) -> None:
        if self._steps % self.stride == 0:
            self.frames.append(state.positions.astype(np.float32))
        self._steps += 1
        self._last = state

    def start(self, state: SimState) -> None:
        self.frames.append(state.positions.astype(np.float32))
        self._last = state

    def add_action(self, action: Any) -> None:
        self.actions.append(action.to_dict() if hasattr(action, "to_dict") else dict(action))

    def close(self, state: Optional[SimState] = None) -> None:
        state = state or self._last
        if state is not None:
            final = state.positions.astype(np.float32)
            if not self.frames or not np.array_equal(self.frames[-1], final):
                self.frames.append(final)

    def manifest(self, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        data = {
            "garment": self.garment,
            "seed": self.seed,
            "actions": self.actions,
            "steps": self._steps,
            "frames": len(self.frames),
            "stride": self.stride,
        }
        if extra:
            data.update(extra)
        return data

    def save(self, out_dir: str, name: str, extra: Optional[Dict[str, Any]] = None) -> str:
        """Write ``<name>.ugmc`` and ``<name>.json``; returns the manifest path."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory(str(out / f"{name}.ugmc"), np.stack(self.frames))
        manifest = self.manifest(extra)
        manifest["trajectory"] = f"{name}.ugmc"
        return write_json(str(out / f"{name}.json"), manifest)
