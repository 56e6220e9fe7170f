"""Similarity heatmaps as coloured point clouds."""

from __future__ import annotations

import numpy as np

from core.storage import export_colored_points
from modules.descriptor.field import DescriptorField, similarities

# similarity -> RGB, interpolated linearly between the rows
COLORMAP = np.array([
    [-1.0, 59.0, 76.0, 192.0],
    [0.0, 221.0, 221.0, 221.0],
    [1.0, 180.0, 4.0, 38.0],
])


def similarity_colors(scores: np.ndarray) -> np.ndarray:
    """(N,) similarities in [-1, 1] -> (N, 3) uint8, rounded half to even."""
    s = np.clip(np.asarray(scores, dtype=np.float64), -1.0, 1.0)
    rgb = np.stack([np.interp(s, COLORMAP[:, 0], COLORMAP[:, c]) for c in (1, 2, 3)], axis=1)
    return np.rint(rgb).astype(np.uint8)


def export_heatmap(field_a: DescriptorField, query: int, field_b: DescriptorField, path: str) -> str:
    """PLY of field_b's points coloured by their similarity to field_a's ``query`` row."""
    if not 0 <= query < len(field_a):
        raise IndexError(f"query {query} outside 0..{len(field_a) - 1}")
    colors = similarity_colors(similarities(field_a, query, field_b))
    return export_colored_points(path, field_b.obs.points, colors)
