"""Pinhole camera with a look-at frame."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from core.config import RenderConfig


@dataclass(frozen=True)
class Camera:
    """Top-down by default: 2 m above the origin, image up along +y.

    Pixel centres sit at integer coordinates; (row, col) = (v, u).
    """
    position: Tuple[float, float, float] = (0.0, 0.0, 2.0)
    look_at: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    up: Tuple[float, float, float] = (0.0, 1.0, 0.0)
    resolution: int = 256
    focal: float = 320.0

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError(f"focal length must be positive, got {self.focal}")
        if self.resolution < 1:
            raise ValueError(f"resolution must be positive, got {self.resolution}")

    @classmethod
    def from_config(cls, render: Optional[RenderConfig] = None) -> "Camera":
        render = render or RenderConfig()
        return cls(position=(0.0, 0.0, render.camera_height), resolution=render.resolution,
                   focal=render.focal)

    def frame(self) -> np.ndarray:
        """Rows: right, down, forward (world -> camera rotation)."""
        forward = np.subtract(self.look_at, self.position).astype(np.float64)
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, self.up)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        return np.stack([right, down, forward])

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World points -> (u, v, depth). Depth <= 0 means behind the camera."""
        cam = (np.asarray(points, dtype=np.float64) - np.asarray(self.position)) @ self.frame().T
        depth = cam[:, 2]
        safe = np.where(depth > 1e-9, depth, np.nan)
        centre = (self.resolution - 1) / 2.0
        u = centre + self.focal * cam[:, 0] / safe
        v = centre + self.focal * cam[:, 1] / safe
        return u, v, depth
