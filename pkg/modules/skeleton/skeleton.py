"""Skeleton: ordered keypoints with pairwise edge activations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

MAX_KEYPOINTS = 50


def pair_count(s: int) -> int:
    return s * (s - 1) // 2


def pair_index(i: int, j: int, s: int) -> int:
    """Position of pair (i, j), i < j, in the upper-triangular vector."""
    if i > j:
        i, j = j, i
    if i == j or not 0 <= i < s or not 0 <= j < s:
        raise IndexError(f"invalid keypoint pair ({i}, {j}) for s={s}")
    return i * s - i * (i + 1) // 2 + (j - i - 1)


@dataclass
class Skeleton:
    """s ordered keypoints.

    Attributes:
        names: Landmark name per keypoint (or "k<i>" for learned ones)
        keypoints: (s, 3) positions in the garment's canonical frame
        vertex_ids: (s,) nearest mesh vertex per keypoint
        activations: upper-triangular a_ij vector, length s(s-1)/2, values in [0, 1]
    """
    names: List[str]
    keypoints: np.ndarray
    vertex_ids: np.ndarray
    activations: np.ndarray

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        self.vertex_ids = np.asarray(self.vertex_ids, dtype=np.int64)
        self.activations = np.asarray(self.activations, dtype=np.float64)
        s = len(self.names)
        problems = []
        if not 2 <= s <= MAX_KEYPOINTS:
            problems.append(f"keypoint count {s} outside [2, {MAX_KEYPOINTS}]")
        if self.keypoints.shape != (s, 3):
            problems.append(f"keypoints shape {self.keypoints.shape} != ({s}, 3)")
        if self.vertex_ids.shape != (s,):
            problems.append(f"vertex_ids shape {self.vertex_ids.shape} != ({s},)")
        if self.activations.shape != (pair_count(s),):
            problems.append(f"activations length {self.activations.shape} != {pair_count(s)}")
        elif np.any((self.activations < 0) | (self.activations > 1)):
            problems.append("activations outside [0, 1]")
        if problems:
            raise ValueError("Invalid skeleton: " + "; ".join(problems))

    @property
    def size(self) -> int:
        return len(self.names)

    def activation(self, i: int, j: int) -> float:
        return float(self.activations[pair_index(i, j, self.size)])

    def matrix(self) -> np.ndarray:
        """Symmetric (s, s) activation matrix with a zero diagonal."""
        s = self.size
        out = np.zeros((s, s))
        iu = np.triu_indices(s, k=1)
        out[iu] = self.activations
        return out + out.T

    def edges(self, threshold: float = 0.5) -> List[Tuple[int, int]]:
        iu, ju = np.triu_indices(self.size, k=1)
        keep = self.activations > threshold
        return [(int(i), int(j)) for i, j in zip(iu[keep], ju[keep])]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "names": list(self.names),
            "keypoints": self.keypoints.tolist(),
            "vertex_ids": self.vertex_ids.tolist(),
            "activations": self.activations.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Skeleton":
        return cls(
            names=list(data["names"]),
            keypoints=np.array(data["keypoints"]),
            vertex_ids=np.array(data["vertex_ids"]),
            activations=np.array(data["activations"]),
        )


def activations_from_edges(s: int, edges: List[Tuple[int, int]],
                           value: float = 1.0, background: Optional[float] = 0.0) -> np.ndarray:
    out = np.full(pair_count(s), background, dtype=np.float64)
    for i, j in edges:
        out[pair_index(i, j, s)] = value
    return out
