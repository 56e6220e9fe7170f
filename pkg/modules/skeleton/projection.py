"""Skeleton projection onto deformation states by vertex tracing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.config import RenderConfig
from core.errors import MeshMismatchError
from modules.garment.generator import GarmentMesh
from modules.percept.camera import Camera
from modules.percept.observation import PointCloudObs
from modules.percept.render import visible_vertices
from modules.sim.state import SimState
from modules.skeleton.skeleton import Skeleton


@dataclass
class ProjectedSkeleton:
    """Skeleton keypoints in one deformation state."""
    skeleton: Skeleton
    positions: np.ndarray
    visible: np.ndarray

    def visible_indices(self) -> np.ndarray:
        return np.flatnonzero(self.visible)


def project_skeleton(
    mesh: GarmentMesh,
    skeleton: Skeleton,
    state: SimState,
    obs: Optional[PointCloudObs] = None,
    camera: Optional[Camera] = None,
    render: Optional[RenderConfig] = None,
) -> ProjectedSkeleton:
    """Current particle positions of the skeleton's vertices.

    Visibility is membership of each keypoint vertex in ``obs``'s trace when an
    observation is given, otherwise the z-buffer visibility of the state.

    Raises:
        MeshMismatchError: State, observation or vertex ids do not fit the mesh
    """
    state.check_mesh(mesh)
    ids = skeleton.vertex_ids
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= mesh.vertex_count:
        raise MeshMismatchError(f"Skeleton vertex ids out of range for {mesh.mesh_id}")
    if obs is not None:
        if obs.mesh_id != mesh.mesh_id:
            raise MeshMismatchError(f"Observation of {obs.mesh_id} used with {mesh.mesh_id}")
        seen = np.zeros(mesh.vertex_count, dtype=bool)
        seen[obs.trace] = True
    else:
        seen = visible_vertices(state, mesh, camera, render)
    return ProjectedSkeleton(skeleton=skeleton, positions=state.positions[ids].copy(), visible=seen[ids])
