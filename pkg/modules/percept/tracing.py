"""Ground-truth correspondence through vertex tracing, and canonical distances."""

from __future__ import annotations

from typing import Optional

import numpy as np

from core.errors import MeshMismatchError
from modules.garment.generator import GarmentMesh
from modules.percept.observation import PointCloudObs


def check_same_mesh(obs1: PointCloudObs, obs2: PointCloudObs) -> None:
    if obs1.mesh_id != obs2.mesh_id:
        raise MeshMismatchError(f"Observations come from different meshes: "
                                f"{obs1.mesh_id} vs {obs2.mesh_id}")


def trace_correspondence(obs1: PointCloudObs, obs2: PointCloudObs, idx: int) -> Optional[int]:
    """Index in obs2 carrying the same vertex as obs1[idx] (lowest index), or None."""
    check_same_mesh(obs1, obs2)
    return obs2.first_index.get(int(obs1.trace[idx]))


def canonical_distance(mesh: GarmentMesh, v1: int, v2: int) -> float:
    """Euclidean distance between two vertices in the flat pose."""
    return float(np.linalg.norm(mesh.vertices[v1] - mesh.vertices[v2]))


def canonical_distances(mesh: GarmentMesh, v: int, others: np.ndarray) -> np.ndarray:
    return np.linalg.norm(mesh.vertices[np.asarray(others)] - mesh.vertices[v][None, :], axis=1)
