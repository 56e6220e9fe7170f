"""Demonstration-matched policies for folding, unfolding and hanging."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.config import AppConfig
from core.log import get_logger
from modules.descriptor.field import DescriptorField, best_match, forward, similarity
from modules.descriptor.network import PointEncoder
from modules.garment.generator import GarmentMesh
from modules.percept.render import render_partial
from modules.sim.primitives import Fling, default_rack, execute_fling, execute_pick_place, hang_attempt
from modules.sim.solver import Capsule
from modules.sim.state import ConstraintSet, SimState
from modules.tasks.demonstration import Demonstration, MatchedAction, TaskKind, fold_target, match_demonstration
from validation.task_metrics import Silhouette, coverage_ratio, fold_iou, passes

logger = get_logger("tasks")

POLICIES = ("matched", "random")


@dataclass
class EpisodeResult:
    """One task episode.

    ``success`` is always ``settled and metric >= threshold``.
    """
    episode: int
    task: str
    garment: str
    seed: int
    metric_name: str
    metric: float
    threshold: float
    success: bool
    settled: bool = True
    actions: int = 0
    picks: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["picks"] = " ".join(str(p) for p in self.picks)
        return data


def _result(episode: int, task: TaskKind, mesh: GarmentMesh, seed: int, name: str, value: float,
            bar: float, settled: bool, actions: int, picks: Sequence[int]) -> EpisodeResult:
    return EpisodeResult(
        episode=episode, task=task.value, garment=mesh.mesh_id, seed=seed,
        metric_name=name, metric=float(value), threshold=float(bar),
        success=bool(settled and passes(value, bar)), settled=settled,
        actions=actions, picks=[int(p) for p in picks],
    )


def random_pick_actions(demo: Demonstration, obs, rng: np.random.Generator,
                        place_floor: float) -> List[MatchedAction]:
    """Baseline: uniform random picks with the demo's scaled displacements."""
    scale = obs.bbox_diagonal() / max(demo.obs.bbox_diagonal(), 1e-12)
    out = []
    for action in demo.actions:
        picks = tuple(int(rng.integers(len(obs))) for _ in action.picks)
        if len(set(int(obs.trace[j]) for j in picks)) < len(picks):
            picks = picks[:1]
        places = []
        for i, j, place in zip(action.picks, picks, action.places):
            target = obs.points[j] + scale * (np.asarray(place) - demo.obs.points[i])
            target[2] = max(target[2], place_floor)
            places.append(tuple(float(c) for c in target))
        out.append(MatchedAction(picks=picks, vertices=tuple(int(obs.trace[j]) for j in picks),
                                 places=tuple(places)))
    return out


def run_fold(
    demo: Demonstration,
    mesh: GarmentMesh,
    constraints: ConstraintSet,
    state: SimState,
    model: PointEncoder,
    config: Optional[AppConfig] = None,
    seed: int = 0,
    episode: int = 0,
    policy: str = "matched",
    target: Optional[Silhouette] = None,
) -> EpisodeResult:
    """Execute the matched demo steps and score IoU against the fold target."""
    config = config or AppConfig()
    obs = render_partial(state, mesh, seed=seed, render=config.render)
    if policy == "matched":
        actions = match_demonstration(demo, obs, model, config.task)
    elif policy == "random":
        actions = random_pick_actions(demo, obs, np.random.default_rng([seed, 3]), config.task.place_floor)
    else:
        raise ValueError(f"Unknown policy '{policy}' (choose from {', '.join(POLICIES)})")

    settled = True
    for action in actions:
        state = execute_pick_place(state, action.primitive(), constraints, config.sim)
        settled &= state.settled
    target = target or fold_target(mesh, demo.target or "half_fold")
    iou = fold_iou(state, target, mesh, config.task.raster_resolution)
    logger.info("Fold episode %d on %s: IoU %.3f", episode, mesh.mesh_id, iou)
    return _result(episode, TaskKind.FOLD, mesh, seed, "iou", iou, config.task.iou_bar, settled,
                   len(actions), [v for a in actions for v in a.vertices])


def select_fling_pair(
    field_demo: DescriptorField,
    candidates: Sequence[Tuple[int, int]],
    field_obs: DescriptorField,
) -> Tuple[int, Tuple[int, int], List[float]]:
    """Candidate whose two best matches are most similar in sum.

    Candidates whose matches land on the same vertex score -inf; ties go to the
    lowest candidate index.

    Returns:
        (candidate index, matched observation indices, score per candidate)
    """
    scores, matches = [], []
    trace = field_obs.obs.trace
    for i, j in candidates:
        mi, mj = best_match(field_demo, i, field_obs), best_match(field_demo, j, field_obs)
        score = similarity(field_demo, i, field_obs, mi) + similarity(field_demo, j, field_obs, mj)
        scores.append(score if trace[mi] != trace[mj] else -np.inf)
        matches.append((mi, mj))
    best = int(np.argmax(scores))
    return best, matches[best], scores


def run_unfold(
    demo: Demonstration,
    mesh: GarmentMesh,
    constraints: ConstraintSet,
    state: SimState,
    model: PointEncoder,
    config: Optional[AppConfig] = None,
    seed: int = 0,
    episode: int = 0,
) -> EpisodeResult:
    """Fling the best-matching candidate pair until coverage reaches the bar (at most max_flings)."""
    config = config or AppConfig()
    bar = config.task.coverage_bar
    field_demo = forward(model, demo.obs)
    coverage = coverage_ratio(state, mesh, config.task.raster_resolution)
    flings, settled, picks = 0, True, []
    while coverage < bar and flings < config.task.max_flings:
        obs = render_partial(state, mesh, seed=seed + flings, render=config.render)
        field_obs = forward(model, obs)
        _, (mi, mj), scores = select_fling_pair(field_demo, demo.candidates, field_obs)
        if not np.isfinite(max(scores)):
            logger.warning("No candidate pair with distinct matches on %s", mesh.mesh_id)
            break
        pair = (int(obs.trace[mi]), int(obs.trace[mj]))
        state = execute_fling(state, Fling(picks=pair), constraints, config.sim)
        settled &= state.settled
        picks.extend(pair)
        flings += 1
        coverage = coverage_ratio(state, mesh, config.task.raster_resolution)
    logger.info("Unfold episode %d on %s: coverage %.3f after %d flings", episode, mesh.mesh_id,
                coverage, flings)
    return _result(episode, TaskKind.UNFOLD, mesh, seed, "coverage", coverage, bar, settled, flings, picks)


def run_hang(
    demo: Demonstration,
    mesh: GarmentMesh,
    constraints: ConstraintSet,
    state: SimState,
    model: PointEncoder,
    config: Optional[AppConfig] = None,
    rack: Optional[Capsule] = None,
    seed: int = 0,
    episode: int = 0,
) -> EpisodeResult:
    """Match the demo pick, carry it over the rack and report whether the garment stays on."""
    config = config or AppConfig()
    rack = rack or default_rack(config.task, config.sim)
    obs = render_partial(state, mesh, seed=seed, render=config.render)
    field_demo, field_obs = forward(model, demo.obs), forward(model, obs)
    j = best_match(field_demo, demo.actions[0].picks[0], field_obs)
    vertex = int(obs.trace[j])
    result = hang_attempt(state, constraints, vertex, rack, config.sim)
    return _result(episode, TaskKind.HANG, mesh, seed, "hung", float(result.success), 1.0,
                   result.state.settled, 1, [vertex])
