"""Simulation state and constraint sets."""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import shapely

from core.config import SimConfig
from core.errors import MeshMismatchError, SimulationError
from modules.garment.generator import GarmentMesh


@dataclass
class SimState:
    """One deformation state of one garment.

    Particle i is mesh vertex i for the whole life of a state; every
    operation returns index-stable arrays.

    Attributes:
        positions: (V, 3) meters
        velocities: (V, 3) m/s
        inv_mass: (V,) 1/kg, 0 for pinned or grasped particles
        mesh_id: Identity of the garment mesh
        time: Simulated seconds
        settled: False when a primitive hit its step cap before settling
        floor: (V,) per-particle ground height (layering offsets)
    """
    positions: np.ndarray
    velocities: np.ndarray
    inv_mass: np.ndarray
    mesh_id: str
    time: float = 0.0
    settled: bool = True
    floor: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.velocities = np.asarray(self.velocities, dtype=np.float64)
        self.inv_mass = np.asarray(self.inv_mass, dtype=np.float64)
        if self.floor is None:
            self.floor = np.zeros(len(self.positions))
        n = len(self.positions)
        if self.positions.shape != (n, 3) or self.velocities.shape != (n, 3):
            raise SimulationError("positions and velocities must both be (V, 3)")
        if self.inv_mass.shape != (n,) or self.floor.shape != (n,):
            raise SimulationError("inv_mass and floor must have one entry per particle")

    @property
    def particle_count(self) -> int:
        return len(self.positions)

    def copy(self) -> "SimState":
        return replace(
            self,
            positions=self.positions.copy(),
            velocities=self.velocities.copy(),
            inv_mass=self.inv_mass.copy(),
            floor=self.floor.copy(),
        )

    def check_finite(self) -> None:
        bad = []
        if not np.all(np.isfinite(self.positions)):
            bad.append("positions")
        if not np.all(np.isfinite(self.velocities)):
            bad.append("velocities")
        if not np.all(np.isfinite(self.inv_mass)):
            bad.append("inv_mass")
        if bad:
            raise SimulationError(f"Non-finite state: {', '.join(bad)}")

    def check_mesh(self, mesh: GarmentMesh) -> None:
        if self.mesh_id != mesh.mesh_id or self.particle_count != mesh.vertex_count:
            raise MeshMismatchError(
                f"State of {self.mesh_id} ({self.particle_count} particles) does not "
                f"belong to mesh {mesh.mesh_id} ({mesh.vertex_count} vertices)")

    def max_speed(self) -> float:
        return float(np.linalg.norm(self.velocities, axis=1).max(initial=0.0))

    def state_hash(self) -> str:
        """SHA-256 over positions and velocities (little-endian float64)."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.positions, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.velocities, dtype="<f8").tobytes())
        return h.hexdigest()

    @classmethod
    def flat(cls, mesh: GarmentMesh, constraints: "ConstraintSet") -> "SimState":
        """Canonical pose resting on the ground, at rest."""
        positions = mesh.vertices.copy()
        positions[:, 2] = 0.0
        return cls(
            positions=positions,
            velocities=np.zeros_like(positions),
            inv_mass=constraints.inv_mass.copy(),
            mesh_id=mesh.mesh_id,
        )


@dataclass
class ConstraintSet:
    """Distance constraints with their Gauss-Seidel colouring.

    Attributes:
        stretch: (E, 2) particle pairs, one per mesh edge
        stretch_rest: (E,) rest lengths
        bend: (B, 2) opposite-vertex pairs across adjacent triangles
        bend_rest: (B,) rest lengths
        stretch_stiffness / bend_stiffness: PBD stiffness in [0, 1]
        inv_mass: (V,) free-particle inverse masses (restored on release)
        rest_positions: (V, 3) positions the rest lengths were measured on
        tethers: Rest geodesics for long-range attachments to pinned particles
    """
    stretch: np.ndarray
    stretch_rest: np.ndarray
    bend: np.ndarray
    bend_rest: np.ndarray
    stretch_stiffness: float
    bend_stiffness: float
    inv_mass: np.ndarray
    rest_positions: np.ndarray
    stretch_colors: List[np.ndarray] = field(default_factory=list)
    bend_colors: List[np.ndarray] = field(default_factory=list)
    tethers: Optional[TetherTable] = None

    def __post_init__(self):
        self.stretch = np.asarray(self.stretch, dtype=np.int64).reshape(-1, 2)
        self.bend = np.asarray(self.bend, dtype=np.int64).reshape(-1, 2)
        self.stretch_rest = np.asarray(self.stretch_rest, dtype=np.float64)
        self.bend_rest = np.asarray(self.bend_rest, dtype=np.float64)
        if not self.stretch_colors and len(self.stretch):
            self.stretch_colors = color_constraints(self.stretch)
        if not self.bend_colors and len(self.bend):
            self.bend_colors = color_constraints(self.bend)

    @property
    def particle_count(self) -> int:
        return len(self.inv_mass)

    @property
    def mean_edge(self) -> float:
        return float(self.stretch_rest.mean()) if len(self.stretch_rest) else 0.0

    def stretch_residual(self, positions: np.ndarray) -> float:
        """Sum over stretch constraints of |length - rest|."""
        if not len(self.stretch):
            return 0.0
        d = positions[self.stretch[:, 1]] - positions[self.stretch[:, 0]]
        return float(np.abs(np.linalg.norm(d, axis=1) - self.stretch_rest).sum())

    def max_relative_stretch(self, positions: np.ndarray) -> float:
        d = positions[self.stretch[:, 1]] - positions[self.stretch[:, 0]]
        return float((np.abs(np.linalg.norm(d, axis=1) - self.stretch_rest) / self.stretch_rest).max())

    @classmethod
    def from_pairs(
        cls,
        rest_positions: np.ndarray,
        stretch: np.ndarray,
        bend: Optional[np.ndarray] = None,
        inv_mass: Optional[np.ndarray] = None,
        stretch_stiffness: float = 1.0,
        bend_stiffness: float = 0.3,
    ) -> "ConstraintSet":
        """Constraints over explicit particle pairs, rest lengths from ``rest_positions``."""
        rest_positions = np.asarray(rest_positions, dtype=np.float64)
        stretch = np.asarray(stretch, dtype=np.int64).reshape(-1, 2)
        bend = np.zeros((0, 2), dtype=np.int64) if bend is None else np.asarray(bend).reshape(-1, 2)
        if inv_mass is None:
            inv_mass = np.ones(len(rest_positions))

        def lengths(pairs):
            return np.linalg.norm(rest_positions[pairs[:, 1]] - rest_positions[pairs[:, 0]], axis=1)

        return cls(
            stretch=stretch,
            stretch_rest=lengths(stretch),
            bend=bend,
            bend_rest=lengths(bend),
            stretch_stiffness=stretch_stiffness,
            bend_stiffness=bend_stiffness,
            inv_mass=np.asarray(inv_mass, dtype=np.float64),
            rest_positions=rest_positions.copy(),
        )


class TetherTable:
    """Rest-shape geodesic distances from pinned particles, computed on demand.

    On a planar rest mesh the distance is an any-angle shortest path: a
    Dijkstra over mesh edges whose relaxations shortcut to the predecessor's
    parent whenever the straight segment stays on the cloth. Non-planar rest
    shapes (or no faces) fall back to plain edge-graph Dijkstra.
    """

    def __init__(self, rest_positions: np.ndarray, edges: np.ndarray, faces: Optional[np.ndarray] = None):
        rest = np.asarray(rest_positions, dtype=np.float64)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.points = rest
        self.neighbors: List[List[int]] = [[] for _ in range(len(rest))]
        for i, j in edges.tolist():
            self.neighbors[i].append(j)
            self.neighbors[j].append(i)
        self.region = None
        if faces is not None and len(faces) and np.ptp(rest[:, 2]) < 1e-9:
            lengths = np.linalg.norm(rest[edges[:, 1], :2] - rest[edges[:, 0], :2], axis=1)
            eps = 1e-3 * float(lengths.mean()) if len(lengths) else 1e-9
            self.region = shapely.union_all(shapely.polygons(rest[np.asarray(faces)][:, :, :2])).buffer(eps)
            shapely.prepare(self.region)
        self._cache: Dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._cache)

    def visible(self, a: int, targets: Sequence[int]) -> np.ndarray:
        """Whether the straight rest segment from ``a`` to each target stays on the cloth."""
        targets = np.asarray(targets, dtype=np.int64)
        if self.region is None:
            return np.zeros(len(targets), dtype=bool)
        segments = np.stack([np.broadcast_to(self.points[a, :2], (len(targets), 2)),
                             self.points[targets, :2]], axis=1)
        return shapely.covers(self.region, shapely.linestrings(segments))

    def distances(self, source: int) -> np.ndarray:
        """(V,) rest geodesic from ``source``; inf for unreachable particles."""
        if source not in self._cache:
            self._cache[source] = self._search(int(source))
        return self._cache[source]

    def _search(self, source: int) -> np.ndarray:
        p = self.points
        dist = np.full(len(p), np.inf)
        parent = np.arange(len(p))
        done = np.zeros(len(p), dtype=bool)
        dist[source] = 0.0
        heap = [(0.0, source)]
        while heap:
            d, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            vs = [v for v in self.neighbors[u] if not done[v]]
            if not vs:
                continue
            vs = np.asarray(vs, dtype=np.int64)
            via = np.full(len(vs), u)
            up = parent[u]
            if up != u:
                via[self.visible(up, vs)] = up
            cand = dist[via] + np.linalg.norm(p[vs] - p[via], axis=1)
            better = cand < dist[vs]
            for v, c, q in zip(vs[better].tolist(), cand[better].tolist(), via[better].tolist()):
                dist[v] = c
                parent[v] = q
                heapq.heappush(heap, (c, v))
        return dist


def color_constraints(pairs: np.ndarray) -> List[np.ndarray]:
    """Greedy colouring: no two constraints of one colour share a particle."""
    used: dict = {}
    colors: List[List[int]] = []
    for k, (i, j) in enumerate(pairs.tolist()):
        taken = used.get(i, set()) | used.get(j, set())
        c = 0
        while c in taken:
            c += 1
        if c == len(colors):
            colors.append([])
        colors[c].append(k)
        used.setdefault(i, set()).add(c)
        used.setdefault(j, set()).add(c)
    return [np.array(group, dtype=np.int64) for group in colors]


def particle_masses(vertices: np.ndarray, faces: np.ndarray, density: float) -> np.ndarray:
    """Lumped mass: density times one third of the adjacent triangle area."""
    tri = vertices[faces]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    mass = np.zeros(len(vertices))
    np.add.at(mass, faces.ravel(), np.repeat(area / 3.0, 3))
    return density * mass


def build_constraints(mesh: GarmentMesh, config: Optional[SimConfig] = None) -> ConstraintSet:
    """Stretch constraints on mesh edges, bending constraints across adjacent faces,
    tethers over the rest shape when ``config.tethers``."""
    config = config or SimConfig()
    tm = mesh.as_trimesh()
    stretch = np.asarray(tm.edges_unique, dtype=np.int64)
    bend = np.asarray(tm.face_adjacency_unshared, dtype=np.int64).reshape(-1, 2)
    mass = particle_masses(mesh.vertices, mesh.faces, config.density)
    if np.any(mass <= 0):
        raise SimulationError("Mesh has vertices without incident faces")
    constraints = ConstraintSet.from_pairs(
        rest_positions=mesh.vertices,
        stretch=stretch,
        bend=bend,
        inv_mass=1.0 / mass,
        stretch_stiffness=config.stretch_stiffness,
        bend_stiffness=config.bend_stiffness,
    )
    if config.tethers:
        constraints.tethers = TetherTable(mesh.vertices, constraints.stretch, mesh.faces)
    return constraints
