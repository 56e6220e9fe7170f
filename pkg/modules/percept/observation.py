"""Partial point cloud observations with their vertex trace."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from sklearn.neighbors import NearestNeighbors

from core.storage import read_json, read_observation, write_json, write_observation


@dataclass
class PointCloudObs:
    """N observed points; ``trace[n]`` is the mesh vertex point n was sampled from.

    Attributes:
        points: (N, 3) world positions (meters)
        trace: (N,) vertex ids
        mesh_id: Garment mesh identity
        category: Garment category value ("top", ...)
        visible: (V,) visibility mask of all vertices, if known
    """
    points: np.ndarray
    trace: np.ndarray
    mesh_id: str
    category: str = ""
    visible: Optional[np.ndarray] = None
    _first: Optional[Dict[int, int]] = field(default=None, repr=False, compare=False)
    _knn: Dict[int, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.trace = np.asarray(self.trace, dtype=np.int64)
        if self.points.shape != (len(self.trace), 3):
            raise ValueError(f"points {self.points.shape} and trace {self.trace.shape} disagree")

    def __len__(self) -> int:
        return len(self.trace)

    @property
    def first_index(self) -> Dict[int, int]:
        """Vertex id -> lowest point index carrying it."""
        if self._first is None:
            ids, first = np.unique(self.trace, return_index=True)
            self._first = dict(zip(ids.tolist(), first.tolist()))
        return self._first

    def traced_vertices(self) -> np.ndarray:
        return np.unique(self.trace)

    def neighbors(self, k: int) -> np.ndarray:
        """(N, k) indices of the k nearest points (self first), cached per k."""
        if k not in self._knn:
            k_eff = min(k, len(self))
            tree = NearestNeighbors(n_neighbors=k_eff, algorithm="kd_tree").fit(self.points)
            self._knn[k] = tree.kneighbors(self.points, return_distance=False)
        return self._knn[k]

    def nearest_point(self, position: np.ndarray) -> int:
        """Index of the observed point closest to ``position`` (lowest index on ties)."""
        d = np.linalg.norm(self.points - np.asarray(position)[None, :], axis=1)
        return int(np.argmin(d))

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))

    def translated(self, offset: np.ndarray) -> "PointCloudObs":
        return PointCloudObs(points=self.points + np.asarray(offset), trace=self.trace.copy(),
                             mesh_id=self.mesh_id, category=self.category,
                             visible=None if self.visible is None else self.visible.copy())

    def permuted(self, order: np.ndarray) -> "PointCloudObs":
        return PointCloudObs(points=self.points[order], trace=self.trace[order],
                             mesh_id=self.mesh_id, category=self.category, visible=self.visible)

    def manifest(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"mesh_id": self.mesh_id, "category": self.category,
                                "count": len(self)}
        if self.visible is not None:
            data["visible"] = np.flatnonzero(self.visible).tolist()
            data["vertex_count"] = int(len(self.visible))
        return data


def save_observation(obs: PointCloudObs, path: str, extra: Optional[Dict[str, Any]] = None) -> str:
    """Write ``path`` (UGMC) and ``path`` with a .json suffix (manifest)."""
    write_observation(path, obs.points, obs.trace)
    meta = obs.manifest()
    meta.update(extra or {})
    meta["file"] = Path(path).name
    write_json(str(Path(path).with_suffix(".json")), meta)
    return str(path)


def load_observation(path: str) -> PointCloudObs:
    points, trace = read_observation(path)
    meta = read_json(str(Path(path).with_suffix(".json")))
    visible = None
    if "visible" in meta:
        visible = np.zeros(meta["vertex_count"], dtype=bool)
        visible[meta["visible"]] = True
    return PointCloudObs(points=points, trace=trace, mesh_id=meta["mesh_id"],
                         category=meta.get("category", ""), visible=visible)
