"""Task metrics on ground-plane silhouettes: coverage and IoU.

Silhouettes are unions of the mesh triangles projected onto the ground
plane, rasterised at a fixed resolution (2 mm by default): a pixel belongs to
the silhouette when its centre lies inside some triangle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from skimage.draw import polygon

from modules.garment.generator import GarmentMesh
from modules.sim.state import SimState

RESOLUTION = 0.002


@dataclass
class Silhouette:
    """Ground-plane triangles: (V, 2) vertices and (F, 3) faces."""
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)[:, :2]
        self.faces = np.asarray(self.faces, dtype=np.int64)

    @classmethod
    def of_state(cls, state: SimState, mesh: GarmentMesh) -> "Silhouette":
        state.check_mesh(mesh)
        return cls(state.positions[:, :2], mesh.faces)

    @classmethod
    def of_mesh(cls, mesh: GarmentMesh) -> "Silhouette":
        return cls(mesh.vertices[:, :2], mesh.faces)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, rotation: float, src: np.ndarray, dst: np.ndarray) -> "Silhouette":
        """Rotate by ``rotation`` about ``src`` and move ``src`` to ``dst``."""
        c, s = math.cos(rotation), math.sin(rotation)
        rot = np.array([[c, -s], [s, c]])
        return Silhouette((self.vertices - src) @ rot.T + dst, self.faces)


@dataclass
class Grid:
    """Pixel grid: pixel (r, c) has its centre at origin + ((c + .5) res, (r + .5) res)."""
    origin: np.ndarray
    resolution: float
    shape: Tuple[int, int]

    @classmethod
    def covering(cls, *silhouettes: Silhouette, resolution: float = RESOLUTION) -> "Grid":
        lo = np.min([s.bounds()[0] for s in silhouettes], axis=0) - 2 * resolution
        hi = np.max([s.bounds()[1] for s in silhouettes], axis=0) + 2 * resolution
        cols, rows = np.ceil((hi - lo) / resolution).astype(int) + 1
        return cls(origin=lo, resolution=resolution, shape=(int(rows), int(cols)))

    def to_pixels(self, xy: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        scaled = (xy - self.origin) / self.resolution - 0.5
        return scaled[:, 1], scaled[:, 0]


def rasterize(silhouette: Silhouette, grid: Grid) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    rows, cols = grid.to_pixels(silhouette.vertices)
    for tri in silhouette.faces:
        rr, cc = polygon(rows[tri], cols[tri], shape=grid.shape)
        mask[rr, cc] = True
    return mask


def projected_area(silhouette: Silhouette, resolution: float = RESOLUTION) -> float:
    """Raster area (m^2) of the silhouette's union."""
    grid = Grid.covering(silhouette, resolution=resolution)
    return float(rasterize(silhouette, grid).sum()) * resolution ** 2


def coverage_ratio(state: SimState, mesh: GarmentMesh, resolution: float = RESOLUTION) -> float:
    """Projected ground-plane area divided by the canonical flat area."""
    return projected_area(Silhouette.of_state(state, mesh), resolution) / mesh.canonical_area


def silhouette_iou(a: Silhouette, b: Silhouette, resolution: float = RESOLUTION) -> float:
    """Raster IoU of two silhouettes in their given placement."""
    grid = Grid.covering(a, b, resolution=resolution)
    ma, mb = rasterize(a, grid), rasterize(b, grid)
    union = np.logical_or(ma, mb).sum()
    return float(np.logical_and(ma, mb).sum() / union) if union else 0.0


def principal_frame(silhouette: Silhouette, resolution: float = RESOLUTION) -> Tuple[np.ndarray, float]:
    """Centroid and principal-axis angle of the rasterised silhouette."""
    grid = Grid.covering(silhouette, resolution=resolution)
    rr, cc = np.nonzero(rasterize(silhouette, grid))
    if not len(rr):
        return silhouette.vertices.mean(axis=0), 0.0
    xy = grid.origin + (np.stack([cc, rr], axis=1) + 0.5) * resolution
    centroid = xy.mean(axis=0)
    cov = np.cov((xy - centroid).T) if len(xy) > 1 else np.eye(2)
    w, v = np.linalg.eigh(cov)
    axis = v[:, int(np.argmax(w))]
    return centroid, math.atan2(axis[1], axis[0])


def fold_iou(
    state: SimState,
    target: Silhouette,
    mesh: GarmentMesh,
    resolution: float = RESOLUTION,
) -> float:
    """IoU with the target after registering centroid and principal axis.

    The garment is rotated onto the target's principal axis; both axis
    directions are tried and the better IoU is returned.
    """
    current = Silhouette.of_state(state, mesh)
    c_cur, a_cur = principal_frame(current, resolution)
    c_tgt, a_tgt = principal_frame(target, resolution)
    best = 0.0
    for flip in (0.0, math.pi):
        aligned = current.transformed(a_tgt - a_cur + flip, c_cur, c_tgt)
        best = max(best, silhouette_iou(aligned, target, resolution))
    return best


def passes(metric: float, bar: float) -> bool:
    return bool(metric >= bar)


def coverage_success(state: SimState, mesh: GarmentMesh, bar: float,
                     resolution: Optional[float] = None) -> Tuple[float, bool]:
    value = coverage_ratio(state, mesh, resolution or RESOLUTION)
    return value, passes(value, bar)
