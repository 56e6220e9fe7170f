"""Z-buffer visibility and partial point cloud rendering."""

from __future__ import annotations

from typing import Optional

import numpy as np
from skimage.draw import polygon

from core.config import RenderConfig
from core.errors import VisibilityError
from core.log import get_logger
from modules.garment.generator import GarmentMesh
from modules.percept.camera import Camera
from modules.percept.observation import PointCloudObs
from modules.sim.state import SimState

logger = get_logger("percept")

MIN_POINTS = 64


def depth_buffer(positions: np.ndarray, faces: np.ndarray, camera: Camera) -> np.ndarray:
    """Rasterise triangles into a (res, res) buffer of nearest depths (inf = empty).

    Depth is interpolated perspective-correctly (1/depth is linear on screen).
    """
    res = camera.resolution
    buffer = np.full((res, res), np.inf)
    u, v, depth = camera.project(positions)
    in_front = depth > 1e-9
    for tri in faces:
        if not np.all(in_front[tri]):
            continue
        cu, rv = u[tri], v[tri]
        rr, cc = polygon(rv, cu, shape=(res, res))
        if not len(rr):
            continue
        det = (rv[1] - rv[2]) * (cu[0] - cu[2]) + (cu[2] - cu[1]) * (rv[0] - rv[2])
        if abs(det) < 1e-12:
            continue
        l0 = ((rv[1] - rv[2]) * (cc - cu[2]) + (cu[2] - cu[1]) * (rr - rv[2])) / det
        l1 = ((rv[2] - rv[0]) * (cc - cu[2]) + (cu[0] - cu[2]) * (rr - rv[2])) / det
        l2 = 1.0 - l0 - l1
        inv = l0 / depth[tri[0]] + l1 / depth[tri[1]] + l2 / depth[tri[2]]
        z = 1.0 / np.maximum(inv, 1e-12)
        np.minimum.at(buffer, (rr, cc), z)
    return buffer


def visible_vertices(
    state: SimState,
    mesh: GarmentMesh,
    camera: Optional[Camera] = None,
    render: Optional[RenderConfig] = None,
) -> np.ndarray:
    """Boolean mask of vertices whose depth is within tolerance of the buffer.

    The buffer is read as the minimum over a (2w+1)^2 pixel window around the
    vertex's projection; vertices outside the image or behind the camera are
    not visible.
    """
    render = render or RenderConfig()
    camera = camera or Camera.from_config(render)
    positions = state.positions
    buffer = depth_buffer(positions, mesh.faces, camera)
    u, v, depth = camera.project(positions)
    res = camera.resolution
    w = render.visibility_window

    mask = np.zeros(len(positions), dtype=bool)
    ok = np.isfinite(u) & np.isfinite(v) & (depth > 1e-9)
    cols = np.full(len(positions), -1)
    rows = np.full(len(positions), -1)
    cols[ok] = np.rint(u[ok]).astype(int)
    rows[ok] = np.rint(v[ok]).astype(int)
    ok &= (cols >= 0) & (cols < res) & (rows >= 0) & (rows < res)
    for k in np.flatnonzero(ok):
        r0, r1 = max(rows[k] - w, 0), min(rows[k] + w + 1, res)
        c0, c1 = max(cols[k] - w, 0), min(cols[k] + w + 1, res)
        nearest = buffer[r0:r1, c0:c1].min()
        mask[k] = depth[k] <= nearest + render.depth_tolerance
    return mask


def render_partial(
    state: SimState,
    mesh: GarmentMesh,
    camera: Optional[Camera] = None,
    n: Optional[int] = None,
    seed: int = 0,
    render: Optional[RenderConfig] = None,
) -> PointCloudObs:
    """Sample exactly ``n`` observed points from the visible vertices.

    If n >= the visible count every visible vertex appears once and the rest
    is drawn uniformly with replacement; otherwise n distinct visible vertices
    are drawn. Rows are shuffled.

    Raises:
        ValueError: n < 64
        VisibilityError: No vertex is visible
    """
    render = render or RenderConfig()
    camera = camera or Camera.from_config(render)
    n = render.points if n is None else n
    if n < MIN_POINTS:
        raise ValueError(f"Need at least {MIN_POINTS} points, got {n}")
    state.check_mesh(mesh)

    mask = visible_vertices(state, mesh, camera, render)
    visible = np.flatnonzero(mask)
    if not len(visible):
        raise VisibilityError(f"No visible vertex of {mesh.mesh_id} under the camera")

    # Every visible vertex appears once before any repeats; below that count
    # the draw is without replacement, so no vertex is sampled twice.
    rng = np.random.default_rng(seed)
    if n >= len(visible):
        ids = np.concatenate([visible, rng.choice(visible, n - len(visible), replace=True)])
    else:
        ids = rng.choice(visible, n, replace=False)
    ids = ids[rng.permutation(n)]
    logger.debug("Rendered %s: %d/%d vertices visible", mesh.mesh_id, len(visible), len(mask))
    return PointCloudObs(
        points=state.positions[ids].copy(),
        trace=ids,
        mesh_id=mesh.mesh_id,
        category=mesh.category.value,
        visible=mask,
    )
