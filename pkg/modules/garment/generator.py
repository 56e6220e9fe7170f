"""Procedural garment meshes (top, trouser, dress).

Garments are single-layer front panels built from grid cells (see
templates.py). Generation is a pure function of the spec: the same spec and
seed give a bit-identical mesh.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import trimesh

from core.errors import GarmentSpecError, MeshMismatchError
from core.log import get_logger
from core.storage import export_obj, read_json, read_obj_counts, write_json
from modules.garment.templates import (
    LABEL_PRIORITY,
    SEAMS,
    SKELETON_ORDER,
    Category,
    PartLabel,
    Template,
    cell_count,
    dress_template,
    grid_spacing,
    top_template,
    trouser_template,
)
from modules.skeleton.skeleton import Skeleton, activations_from_edges

logger = get_logger("garment")

MIN_VERTICES = 200
MAX_VERTICES = 50_000


# =============================================================================
# SPEC
# =============================================================================

@dataclass(frozen=True)
class GarmentSpec:
    """Garment size parameters in meters.

    Sleeve/leg values describe the left (-x) side; the ``right_*`` fields
    override them for the right side when set. For dresses the leg fields
    describe the skirt: ``leg_length`` is its length and ``leg_width`` the hem
    flare on each side.
    """
    category: Category = Category.TOP
    body_width: float = 0.5
    body_height: float = 0.65
    sleeve_length: float = 0.2
    sleeve_width: float = 0.15
    collar_width: float = 0.16
    leg_length: float = 0.7
    leg_width: float = 0.15
    edge_length: float = 0.03
    seed: int = 0
    jitter: float = 0.1
    right_sleeve_length: Optional[float] = None
    right_sleeve_width: Optional[float] = None
    right_leg_length: Optional[float] = None
    right_leg_width: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "category", Category(self.category))
        problems = []
        for name in ("body_width", "body_height", "edge_length"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        if self.category in (Category.TOP, Category.DRESS):
            for name in ("sleeve_width", "collar_width"):
                if not getattr(self, name) > 0:
                    problems.append(f"{name} must be > 0")
            for name in ("sleeve_length", "right_sleeve_length"):
                value = getattr(self, name)
                if value is not None and value < 0:
                    problems.append(f"{name} must be >= 0")
            if self.right_sleeve_width is not None and not self.right_sleeve_width > 0:
                problems.append("right_sleeve_width must be > 0")
        if self.category in (Category.TROUSER, Category.DRESS):
            for name in ("leg_length", "right_leg_length"):
                value = getattr(self, name)
                if value is not None and value < 0:
                    problems.append(f"{name} must be >= 0")
        if self.category == Category.TROUSER:
            for name in ("leg_width", "right_leg_width"):
                value = getattr(self, name)
                if value is not None and not value > 0:
                    problems.append(f"{name} must be > 0")
        if self.category == Category.DRESS:
            for name in ("leg_width", "right_leg_width"):
                value = getattr(self, name)
                if value is not None and value < 0:
                    problems.append(f"{name} must be >= 0")
        if not 0 <= self.jitter < 0.5:
            problems.append("jitter must be in [0, 0.5)")
        if problems:
            raise GarmentSpecError("Invalid garment spec: " + "; ".join(problems))

    def side(self, right: bool) -> Dict[str, float]:
        """Sleeve and leg values for one side."""
        def pick(base: str) -> float:
            override = getattr(self, f"right_{base}") if right else None
            return getattr(self, base) if override is None else override
        return {k: pick(k) for k in ("sleeve_length", "sleeve_width", "leg_length", "leg_width")}

    def mirrored(self) -> "GarmentSpec":
        """Spec with left and right side values swapped."""
        left, right = self.side(False), self.side(True)
        return replace(
            self,
            sleeve_length=right["sleeve_length"], sleeve_width=right["sleeve_width"],
            leg_length=right["leg_length"], leg_width=right["leg_width"],
            right_sleeve_length=left["sleeve_length"], right_sleeve_width=left["sleeve_width"],
            right_leg_length=left["leg_length"], right_leg_width=left["leg_width"],
        )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["category"] = self.category.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GarmentSpec":
        return cls(**data)


def sample_spec(
    category: Category,
    rng: np.random.Generator,
    ranges: Dict[str, Tuple[float, float]],
    edge_length: float,
    seed: int,
    jitter: float = 0.1,
) -> GarmentSpec:
    """Draw a symmetric spec with sizes uniform in ``ranges``."""
    category = Category(category)
    values = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in sorted(ranges.items())}
    return GarmentSpec(category=category, edge_length=edge_length, seed=seed,
                       jitter=jitter, **values)


# =============================================================================
# MESH
# =============================================================================

@dataclass
class GarmentMesh:
    """Triangulated garment in its canonical flat pose (z = 0).

    Attributes:
        spec: Generating spec
        vertices: (V, 3) canonical positions in meters
        faces: (F, 3) vertex indices, counter-clockwise seen from +z
        labels: (V,) PartLabel value per vertex
        landmarks: Landmark name -> vertex id
        skeleton_names: Category keypoint enumeration (ordered)
        canonical_area: Sum of flat triangle areas (m^2)
        bbox_diagonal: Diagonal of the flat bounding box (m)
        mesh_id: Stable identity derived from the spec
    """
    spec: GarmentSpec
    vertices: np.ndarray
    faces: np.ndarray
    labels: np.ndarray
    landmarks: Dict[str, int]
    skeleton_names: List[str]
    canonical_area: float
    bbox_diagonal: float
    mesh_id: str
    _trimesh: Optional[trimesh.Trimesh] = field(default=None, repr=False, compare=False)

    @property
    def category(self) -> Category:
        return self.spec.category

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def skeleton_indices(self) -> List[int]:
        return [self.landmarks[name] for name in self.skeleton_names]

    def landmark_position(self, name: str) -> np.ndarray:
        return self.vertices[self.landmarks[name]].copy()

    def as_trimesh(self) -> trimesh.Trimesh:
        """Topology view (process=False keeps vertex order)."""
        if self._trimesh is None:
            self._trimesh = trimesh.Trimesh(vertices=self.vertices, faces=self.faces,
                                            process=False)
        return self._trimesh

    def edges(self) -> np.ndarray:
        return np.asarray(self.as_trimesh().edges_unique, dtype=np.int64)

    def edge_lengths(self) -> np.ndarray:
        e = self.edges()
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    def part_vertices(self, label: PartLabel) -> np.ndarray:
        return np.flatnonzero(self.labels == int(label))

    def to_dict(self) -> Dict[str, Any]:
        """Sidecar metadata."""
        return {
            "mesh_id": self.mesh_id,
            "category": self.category.value,
            "spec": self.spec.to_dict(),
            "seed": self.spec.seed,
            "vertex_count": int(len(self.vertices)),
            "face_count": int(len(self.faces)),
            "labels": [PartLabel(int(l)).display for l in self.labels],
            "landmarks": dict(sorted(self.landmarks.items())),
            "skeleton": self.skeleton_indices,
            "skeleton_names": list(self.skeleton_names),
            "canonical_area": self.canonical_area,
            "bbox_diagonal": self.bbox_diagonal,
        }


def _mesh_id(spec: GarmentSpec) -> str:
    payload = json.dumps(spec.to_dict(), sort_keys=True)
    return f"{spec.category.value}-{hashlib.sha256(payload.encode()).hexdigest()[:12]}"


def build_template(spec: GarmentSpec) -> Tuple[Template, float]:
    """Template cells for a spec plus the grid spacing.

    Raises:
        GarmentSpecError: When the spec does not fit on its grid
    """
    a = grid_spacing(spec.edge_length)
    half = cell_count(spec.body_width / 2.0, a)
    height = cell_count(spec.body_height, a)
    left, right = spec.side(False), spec.side(True)
    problems = []
    if half < 2 or height < 2:
        problems.append("body smaller than 2 cells per half-width/height")

    if spec.category in (Category.TOP, Category.DRESS):
        collar_half = cell_count(spec.collar_width / 2.0, a)
        collar_depth = max(1, cell_count(0.25 * spec.collar_width, a))
        sleeves = tuple(
            (cell_count(side["sleeve_length"], a), max(1, cell_count(side["sleeve_width"], a)))
            for side in (left, right)
        )
        if not 1 <= collar_half <= half - 1:
            problems.append("collar must span at least one cell and be narrower than the body")
        if collar_depth >= height:
            problems.append("collar deeper than the body")
        if any(width >= height for _, width in sleeves):
            problems.append("sleeve wider than body height")
        if problems:
            raise GarmentSpecError("Invalid garment spec: " + "; ".join(problems))
        if spec.category == Category.TOP:
            return top_template(half, height, collar_half, collar_depth, sleeves), a
        skirt = cell_count(left["leg_length"], a)
        if cell_count(right["leg_length"], a) != skirt:
            raise GarmentSpecError("Invalid garment spec: dress skirt length must match on both sides")
        flare = (cell_count(left["leg_width"], a), cell_count(right["leg_width"], a))
        return dress_template(half, height, collar_half, collar_depth, sleeves, skirt, flare), a

    legs = tuple(
        (cell_count(side["leg_length"], a), cell_count(side["leg_width"], a))
        for side in (left, right)
    )
    if any(not 1 <= width <= half - 1 for _, width in legs):
        problems.append(f"leg width must be 1..{half - 1} cells")
    if problems:
        raise GarmentSpecError("Invalid garment spec: " + "; ".join(problems))
    return trouser_template(half, height, legs), a


def generate_garment(spec: GarmentSpec, min_vertices: int = MIN_VERTICES,
                     max_vertices: int = MAX_VERTICES) -> GarmentMesh:
    """Build the flat mesh for a spec.

    Args:
        spec: Garment spec
        min_vertices: Reject resolutions coarser than this
        max_vertices: Reject resolutions finer than this

    Returns:
        GarmentMesh with labels, landmarks and canonical measurements

    Raises:
        GarmentSpecError: Invalid spec or vertex count out of range
    """
    template, a = build_template(spec)
    cell_labels = template.cells()
    cells = sorted(cell_labels, key=lambda c: (c[1], c[0]))

    corners = sorted({(i + di, j + dj) for i, j in cells for di in (0, 1) for dj in (0, 1)},
                     key=lambda c: (c[1], c[0]))
    n = len(corners)
    if not min_vertices <= n <= max_vertices:
        raise GarmentSpecError(
            f"Resolution gives {n} vertices; allowed range is {min_vertices}..{max_vertices} "
            f"(edge length {spec.edge_length} m)")
    index = {c: k for k, c in enumerate(corners)}

    faces = np.empty((2 * len(cells), 3), dtype=np.int64)
    best = np.full(n, 99, dtype=np.int64)
    labels = np.zeros(n, dtype=np.int64)
    for k, (i, j) in enumerate(cells):
        v00, v10 = index[(i, j)], index[(i + 1, j)]
        v01, v11 = index[(i, j + 1)], index[(i + 1, j + 1)]
        if i >= 0:
            faces[2 * k] = (v00, v10, v11)
            faces[2 * k + 1] = (v00, v11, v01)
        else:
            faces[2 * k] = (v00, v10, v01)
            faces[2 * k + 1] = (v10, v11, v01)
        label = cell_labels[(i, j)]
        rank = LABEL_PRIORITY[label]
        for v in (v00, v10, v01, v11):
            if rank < best[v]:
                best[v] = rank
                labels[v] = int(label)

    grid = np.array(corners, dtype=np.float64)
    vertices = np.zeros((n, 3))
    vertices[:, 0] = grid[:, 0] * a
    vertices[:, 1] = grid[:, 1] * a

    if spec.jitter > 0:
        tm = trimesh.Trimesh(vertices=vertices, faces=faces, process=False)
        edges = np.sort(tm.edges, axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        on_boundary = np.zeros(n, dtype=bool)
        on_boundary[uniq[counts == 1].ravel()] = True
        interior = np.flatnonzero(~on_boundary)
        rng = np.random.default_rng(spec.seed)
        offsets = rng.uniform(-spec.jitter * a, spec.jitter * a, size=(len(interior), 2))
        vertices[interior, :2] += offsets

    y_mid = 0.5 * (grid[:, 1].min() + grid[:, 1].max()) * a
    vertices[:, 1] -= y_mid

    tri = vertices[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    area = float(0.5 * np.linalg.norm(cross, axis=1).sum())
    extent = vertices.max(axis=0) - vertices.min(axis=0)

    landmarks = {name: index[corner] for name, corner in template.landmarks.items()}
    mesh = GarmentMesh(
        spec=spec,
        vertices=vertices,
        faces=faces,
        labels=labels,
        landmarks=landmarks,
        skeleton_names=list(SKELETON_ORDER[spec.category]),
        canonical_area=area,
        bbox_diagonal=float(np.linalg.norm(extent)),
        mesh_id=_mesh_id(spec),
    )
    logger.debug("Generated %s: %d vertices, %d faces, area %.4f m^2",
                 mesh.mesh_id, n, len(faces), area)
    return mesh


def analytic_skeleton(mesh: GarmentMesh) -> Skeleton:
    """Template keypoints with activations 1 on seams and 0 elsewhere."""
    names = list(mesh.skeleton_names)
    ids = np.array(mesh.skeleton_indices, dtype=np.int64)
    position = {name: k for k, name in enumerate(names)}
    seams = [(position[u], position[v]) for u, v in SEAMS[mesh.category]]
    return Skeleton(
        names=names,
        keypoints=mesh.vertices[ids].copy(),
        vertex_ids=ids,
        activations=activations_from_edges(len(names), seams),
    )


# =============================================================================
# FILES
# =============================================================================

def save_garment(mesh: GarmentMesh, out_dir: str, name: Optional[str] = None) -> str:
    """Write ``<name>.obj`` and its ``<name>.json`` sidecar; returns the sidecar path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = name or mesh.mesh_id
    export_obj(str(out / f"{name}.obj"), mesh.vertices, mesh.faces)
    meta = mesh.to_dict()
    meta["obj"] = f"{name}.obj"
    return write_json(str(out / f"{name}.json"), meta)


def load_garment(path: str) -> GarmentMesh:
    """Load a garment from its sidecar (or OBJ path next to one).

    The mesh is regenerated from the stored spec; the OBJ and sidecar counts
    must agree with it.

    Raises:
        MeshMismatchError: Regenerated mesh disagrees with the stored files
    """
    path = Path(path)
    sidecar = path.with_suffix(".json")
    meta = read_json(str(sidecar))
    mesh = generate_garment(GarmentSpec.from_dict(meta["spec"]))
    problems = []
    if mesh.mesh_id != meta["mesh_id"]:
        problems.append(f"mesh id {mesh.mesh_id} != {meta['mesh_id']}")
    if (len(mesh.vertices), len(mesh.faces)) != (meta["vertex_count"], meta["face_count"]):
        problems.append("sidecar vertex/face counts differ")
    obj = sidecar.parent / meta.get("obj", sidecar.with_suffix(".obj").name)
    if obj.exists() and read_obj_counts(str(obj)) != (len(mesh.vertices), len(mesh.faces)):
        problems.append(f"{obj.name} vertex/face counts differ")
    if problems:
        raise MeshMismatchError(f"{sidecar}: " + "; ".join(problems))
    return mesh
