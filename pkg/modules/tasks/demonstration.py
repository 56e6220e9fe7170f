"""Demonstrations: landmark recipes, resolved demos, matching and fold targets.

A recipe (demos/*.json) names landmarks instead of points so it can be
resolved on any garment of its category. Resolving it on a garment gives a
Demonstration: an observation plus pick indices into it and place positions.
Matching transfers a Demonstration onto a new observation through the
descriptor field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from core.config import TaskConfig
from core.errors import GarmentSpecError, VisibilityError
from core.storage import read_json, write_json
from modules.descriptor.field import DescriptorField, best_match, forward
from modules.descriptor.network import PointEncoder
from modules.garment.generator import GarmentMesh
from modules.garment.templates import PartLabel
from modules.percept.observation import PointCloudObs, load_observation, save_observation
from modules.sim.primitives import ActionPrimitive, DualPickPlace, PickPlace
from modules.sim.state import SimState
from validation.task_metrics import Silhouette

FOLD_TARGETS = ("flat", "half_fold", "sleeves_then_half")

# Point within this distance (m) of a place position counts as "on the garment".
ON_GARMENT = 0.01


class TaskKind(str, Enum):
    FOLD = "fold"
    UNFOLD = "unfold"
    HANG = "hang"


@dataclass
class DemoAction:
    """One single- or dual-arm step: pick indices into the demo observation and place positions."""
    picks: Tuple[int, ...]
    places: Tuple[Tuple[float, float, float], ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {"picks": [int(p) for p in self.picks],
                "places": [[float(c) for c in q] for q in self.places]}


@dataclass
class Demonstration:
    """A demonstrated task on one observation.

    Attributes:
        obs: Demo observation
        task: Fold, Unfold or Hang
        actions: Ordered steps (fold, hang)
        candidates: Candidate fling pick pairs (unfold)
        target: Fold target strategy, if any
        source: Observation file name when saved
    """
    obs: PointCloudObs
    task: TaskKind
    actions: List[DemoAction] = field(default_factory=list)
    candidates: List[Tuple[int, int]] = field(default_factory=list)
    target: Optional[str] = None
    source: str = ""

    def __post_init__(self):
        self.task = TaskKind(self.task)
        problems = []
        if self.task == TaskKind.UNFOLD and not self.candidates:
            problems.append("unfold demonstrations need candidate pick pairs")
        if self.task != TaskKind.UNFOLD and not self.actions:
            problems.append(f"{self.task.value} demonstrations need at least one action")
        picks = [p for a in self.actions for p in a.picks] + [p for c in self.candidates for p in c]
        if any(not 0 <= p < len(self.obs) for p in picks):
            problems.append("pick index outside the demo observation")
        if self.target is not None and self.target not in FOLD_TARGETS:
            problems.append(f"unknown fold target '{self.target}'")
        if problems:
            raise ValueError("Invalid demonstration: " + "; ".join(problems))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task": self.task.value,
            "obs": self.source,
            "mesh_id": self.obs.mesh_id,
            "category": self.obs.category,
            "target": self.target,
            "actions": [a.to_dict() for a in self.actions],
            "candidates": [[int(i), int(j)] for i, j in self.candidates],
        }


def save_demonstration(demo: Demonstration, path: str) -> str:
    """Write the demo JSON and its observation (``<stem>.obs.ugmc``) next to it."""
    out = Path(path)
    obs_path = out.with_name(out.stem + ".obs.ugmc")
    save_observation(demo.obs, str(obs_path))
    demo.source = obs_path.name
    return write_json(str(out), demo.to_dict())


def load_demonstration(path: str) -> Demonstration:
    data = read_json(path)
    obs = load_observation(str(Path(path).parent / data["obs"]))
    return Demonstration(
        obs=obs,
        task=TaskKind(data["task"]),
        actions=[DemoAction(tuple(a["picks"]), tuple(tuple(q) for q in a["places"])) for a in data["actions"]],
        candidates=[tuple(c) for c in data.get("candidates", [])],
        target=data.get("target"),
        source=data["obs"],
    )


# =============================================================================
# RECIPES
# =============================================================================

def _landmark(mesh: GarmentMesh, name: str) -> int:
    if name not in mesh.landmarks:
        raise GarmentSpecError(f"{mesh.mesh_id} has no landmark '{name}'")
    return mesh.landmarks[name]


def _observed(obs: PointCloudObs, vertex: int, name: str) -> int:
    if vertex not in obs.first_index:
        raise VisibilityError(f"Landmark '{name}' (vertex {vertex}) is not observed")
    return obs.first_index[vertex]


def reflect_point(point: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mirror ``point`` across the ground-plane line through a and b (z kept)."""
    d = b[:2] - a[:2]
    d = d / np.linalg.norm(d)
    rel = point[:2] - a[:2]
    along = np.dot(rel, d) * d
    out = point.copy()
    out[:2] = a[:2] + 2 * along - rel
    return out


def resolve_place(spec: Dict[str, Any], pick_name: str, mesh: GarmentMesh, state: SimState) -> np.ndarray:
    """Place position from {"landmark": name} or {"reflect": [a, b]} (reflect the pick)."""
    if "landmark" in spec:
        return state.positions[_landmark(mesh, spec["landmark"])].copy()
    if "reflect" in spec:
        a, b = (state.positions[_landmark(mesh, n)] for n in spec["reflect"])
        return reflect_point(state.positions[_landmark(mesh, pick_name)], a, b)
    raise ValueError(f"Place spec needs 'landmark' or 'reflect': {spec}")


def resolve_recipe(recipe: Dict[str, Any], mesh: GarmentMesh, state: SimState,
                   obs: PointCloudObs) -> Demonstration:
    """Turn a landmark recipe into a Demonstration on ``obs`` of ``mesh`` in ``state``.

    Raises:
        GarmentSpecError: Recipe category differs or a landmark is missing
        VisibilityError: A pick landmark is not observed
    """
    category = recipe.get("category")
    if category and category != mesh.category.value:
        raise GarmentSpecError(f"Recipe for {category} used on a {mesh.category.value}")
    actions = []
    for step in recipe.get("steps", []):
        picks = tuple(_observed(obs, _landmark(mesh, n), n) for n in step["picks"])
        places = tuple(tuple(resolve_place(p, n, mesh, state).tolist())
                       for p, n in zip(step.get("places", []), step["picks"]))
        actions.append(DemoAction(picks, places))
    candidates = [(_observed(obs, _landmark(mesh, a), a), _observed(obs, _landmark(mesh, b), b))
                  for a, b in recipe.get("candidates", [])]
    return Demonstration(obs=obs, task=TaskKind(recipe["task"]), actions=actions,
                         candidates=candidates, target=recipe.get("target"))


# =============================================================================
# MATCHING
# =============================================================================

@dataclass
class MatchedAction:
    """A demo step transferred onto an observation."""
    picks: Tuple[int, ...]
    vertices: Tuple[int, ...]
    places: Tuple[Tuple[float, float, float], ...]

    def primitive(self) -> ActionPrimitive:
        if len(self.vertices) == 1:
            return PickPlace(pick=self.vertices[0], place=self.places[0])
        return DualPickPlace(picks=tuple(self.vertices), places=tuple(self.places))


def match_demonstration(
    demo: Demonstration,
    obs: PointCloudObs,
    model: PointEncoder,
    config: Optional[TaskConfig] = None,
    fields: Optional[Tuple[DescriptorField, DescriptorField]] = None,
) -> List[MatchedAction]:
    """Transfer every demo step onto ``obs``.

    Picks are best matches of the demo picks. Places replay the demo
    displacement (place minus pick) from the matched pick, scaled by the ratio
    of bbox diagonals, with the height floored at ``place_floor``. With
    ``direct_place_match`` a place lying on the demo garment is matched
    directly instead.
    """
    config = config or TaskConfig()
    field_demo, field_obs = fields or (forward(model, demo.obs), forward(model, obs))
    scale = obs.bbox_diagonal() / max(demo.obs.bbox_diagonal(), 1e-12)
    matched = []
    for action in demo.actions:
        picks = tuple(best_match(field_demo, i, field_obs) for i in action.picks)
        places = []
        for i, j, place in zip(action.picks, picks, action.places):
            place = np.asarray(place, dtype=np.float64)
            target = obs.points[j] + scale * (place - demo.obs.points[i])
            if config.direct_place_match:
                k = demo.obs.nearest_point(place)
                if np.linalg.norm(demo.obs.points[k] - place) <= ON_GARMENT:
                    target = obs.points[best_match(field_demo, k, field_obs)].copy()
            target[2] = max(target[2], config.place_floor)
            places.append(tuple(float(c) for c in target))
        matched.append(MatchedAction(picks=picks, vertices=tuple(int(obs.trace[j]) for j in picks),
                                     places=tuple(places)))
    return matched


# =============================================================================
# FOLD TARGETS
# =============================================================================

def _fold_line(mesh: GarmentMesh) -> float:
    low, high = ("leg-L-outer", "waist-L") if "waist-C" in mesh.landmarks else ("hem-L", "shoulder-L")
    return 0.5 * (mesh.landmark_position(low)[1] + mesh.landmark_position(high)[1])


def _fold_half(xy: np.ndarray, line: float) -> np.ndarray:
    out = xy.copy()
    below = out[:, 1] < line
    out[below, 1] = 2 * line - out[below, 1]
    return out


def fold_target(mesh: GarmentMesh, strategy: str) -> Silhouette:
    """Analytic folded silhouette of ``mesh`` in its canonical frame.

    flat: the canonical pose; half_fold: the part below the hem-shoulder mid
    line reflected upward; sleeves_then_half: sleeves reflected across the
    body sides (armpit x), then the half fold.
    """
    xy = mesh.vertices[:, :2].copy()
    if strategy == "flat":
        return Silhouette(xy, mesh.faces)
    if strategy == "sleeves_then_half":
        for label, side in ((PartLabel.SLEEVE_L, "armpit-L"), (PartLabel.SLEEVE_R, "armpit-R")):
            if side not in mesh.landmarks:
                raise GarmentSpecError(f"{mesh.mesh_id} has no sleeves to fold")
            ids = mesh.part_vertices(label)
            edge = mesh.landmark_position(side)[0]
            xy[ids, 0] = 2 * edge - xy[ids, 0]
        return Silhouette(_fold_half(xy, _fold_line(mesh)), mesh.faces)
    if strategy == "half_fold":
        return Silhouette(_fold_half(xy, _fold_line(mesh)), mesh.faces)
    raise ValueError(f"Unknown fold target '{strategy}' (choose from {', '.join(FOLD_TARGETS)})")


def load_recipe(path: str) -> Dict[str, Any]:
    recipe = read_json(path)
    if "task" not in recipe:
        raise ValueError(f"{path}: recipe needs a 'task'")
    TaskKind(recipe["task"])
    return recipe
