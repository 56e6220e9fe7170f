"""Training data: garments with their skeletons and observed deformations.

A data directory written by ``corrgarment gen`` and ``corrgarment selfplay``
holds, per garment, the mesh (``<id>.obj`` + ``<id>.json``) and any number of
observations (``<episode>.obs.ugmc`` + ``<episode>.obs.json``). Observation
manifests marked ``"state": "flat"`` are renders of the canonical pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

from core.errors import DatasetError
from core.log import get_logger
from core.storage import read_json
from modules.garment.generator import GarmentMesh, analytic_skeleton, load_garment
from modules.percept.observation import PointCloudObs, load_observation
from modules.skeleton.skeleton import Skeleton

logger = get_logger("training")

SkeletonSource = Callable[["GarmentRecord"], Skeleton]


@dataclass
class GarmentRecord:
    """One garment: mesh, skeleton and deformed observations."""
    mesh: GarmentMesh
    observations: List[PointCloudObs]
    skeleton: Optional[Skeleton] = None
    flat: Optional[PointCloudObs] = None
    names: List[str] = field(default_factory=list)

    def __post_init__(self):
        for obs in self.observations + ([self.flat] if self.flat is not None else []):
            if obs.mesh_id != self.mesh.mesh_id:
                raise DatasetError(f"Observation of {obs.mesh_id} filed under {self.mesh.mesh_id}")
        if self.skeleton is None:
            self.skeleton = analytic_skeleton(self.mesh)

    @property
    def mesh_id(self) -> str:
        return self.mesh.mesh_id

    @property
    def category(self) -> str:
        return self.mesh.category.value


@dataclass
class CorrDataset:
    records: List[GarmentRecord]

    def __len__(self) -> int:
        return len(self.records)

    def deformable(self) -> List[int]:
        """Records with at least two observations."""
        return [g for g, r in enumerate(self.records) if len(r.observations) >= 2]

    def same_category(self, g: int) -> List[int]:
        category = self.records[g].category
        return [h for h, r in enumerate(self.records)
                if h != g and r.category == category and r.observations]

    def categories(self) -> List[str]:
        return sorted({r.category for r in self.records})

    def validate(self) -> None:
        """Raises DatasetError unless >= 2 garments each have >= 2 observations."""
        usable = self.deformable()
        if len(usable) < 2:
            raise DatasetError(
                f"Dataset needs at least 2 garments with 2 observations each, found {len(usable)}")

    def with_skeletons(self, source: SkeletonSource) -> "CorrDataset":
        """Replace every record's skeleton (e.g. by a learned model's prediction)."""
        for record in self.records:
            record.skeleton = source(record)
        return self


def load_dataset(data_dir: str, category: Optional[str] = None) -> CorrDataset:
    """Collect garments and observations from a data directory.

    Raises:
        DatasetError: No garments found, or an observation has no garment
    """
    root = Path(data_dir)
    meshes: Dict[str, GarmentMesh] = {}
    for sidecar in sorted(root.glob("*.json")):
        if sidecar.name.endswith(".obs.json"):
            continue
        meta = read_json(str(sidecar))
        if "spec" not in meta:
            continue
        mesh = load_garment(str(sidecar))
        if category is None or mesh.category.value == category:
            meshes[mesh.mesh_id] = mesh
    if not meshes:
        raise DatasetError(f"No garments in {data_dir}")

    observed: Dict[str, List[PointCloudObs]] = {k: [] for k in meshes}
    names: Dict[str, List[str]] = {k: [] for k in meshes}
    flat: Dict[str, PointCloudObs] = {}
    for path in sorted(root.glob("*.obs.ugmc")):
        meta = read_json(str(path.with_suffix(".json")))
        mesh_id = meta["mesh_id"]
        if mesh_id not in meshes:
            if category is None:
                raise DatasetError(f"{path.name}: garment {mesh_id} missing from {data_dir}")
            continue
        obs = load_observation(str(path))
        if meta.get("state") == "flat":
            flat[mesh_id] = obs
        else:
            observed[mesh_id].append(obs)
            names[mesh_id].append(path.name)

    records = [GarmentRecord(mesh=mesh, observations=observed[k], flat=flat.get(k), names=names[k])
               for k, mesh in meshes.items()]
    logger.info("Loaded %d garments, %d observations from %s", len(records),
                sum(len(r.observations) for r in records), data_dir)
    return CorrDataset(records)
