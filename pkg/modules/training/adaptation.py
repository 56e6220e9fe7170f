"""Few-shot functional adaptation from a handful of annotated landmarks."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from core.config import TrainConfig
from core.errors import DivergenceError, NonFiniteActivation, VisibilityError
from core.log import get_logger
from core.storage import read_json, write_json
from modules.descriptor.field import forward
from modules.descriptor.network import PointEncoder
from modules.percept.observation import PointCloudObs, load_observation
from modules.training.losses import info_nce
from modules.training.sampling import sample_negatives
from modules.training.trainer import make_optimizer

logger = get_logger("training")

MAX_ANNOTATIONS = 5


@dataclass
class AnnotatedPoint:
    obs: PointCloudObs
    index: int
    source: str = ""

    @property
    def vertex(self) -> int:
        return int(self.obs.trace[self.index])


@dataclass
class FewShotAnnotation:
    """One functional landmark marked on 2..5 observations.

    Raises:
        ValueError: Fewer than 2 or more than 5 entries
        VisibilityError: An entry's index is outside its observation
    """
    entries: List[AnnotatedPoint]
    task: str = ""
    landmark: str = ""

    def __post_init__(self):
        if not 2 <= len(self.entries) <= MAX_ANNOTATIONS:
            raise ValueError(f"An annotation needs 2..{MAX_ANNOTATIONS} entries, got {len(self.entries)}")
        for e in self.entries:
            if not 0 <= e.index < len(e.obs):
                raise VisibilityError(f"Annotated index {e.index} not in observation of {e.obs.mesh_id}")

    def pairs(self) -> List[Tuple[AnnotatedPoint, AnnotatedPoint]]:
        return [(a, b) for a in self.entries for b in self.entries if a is not b]

    def to_dict(self) -> dict:
        return {"task": self.task, "landmark": self.landmark,
                "entries": [{"obs": e.source, "index": e.index, "vertex": e.vertex} for e in self.entries]}


def annotate_landmark(
    observations: Sequence[Tuple[PointCloudObs, int, str]],
    count: int,
    task: str = "",
    landmark: str = "",
) -> FewShotAnnotation:
    """Mark a landmark vertex on the first ``count`` observations that see it.

    Args:
        observations: (observation, landmark vertex id, source file) triples
        count: Number of entries (2..5)

    Raises:
        VisibilityError: Fewer than ``count`` observations see their vertex
    """
    entries = []
    for obs, vertex, source in observations:
        if vertex in obs.first_index:
            entries.append(AnnotatedPoint(obs, obs.first_index[vertex], source))
        if len(entries) == count:
            break
    if len(entries) < count:
        raise VisibilityError(f"Landmark '{landmark}' visible in only {len(entries)} observations, need {count}")
    return FewShotAnnotation(entries, task=task, landmark=landmark)


def save_annotations(annotations: Sequence[FewShotAnnotation], path: str) -> str:
    return write_json(path, {"annotations": [a.to_dict() for a in annotations]})


def load_annotations(path: str) -> List[FewShotAnnotation]:
    """Read annotations; observation paths are relative to the file.

    Raises:
        VisibilityError: An annotated point is missing or no longer carries its vertex
    """
    root = Path(path).parent
    out = []
    for item in read_json(path)["annotations"]:
        entries = []
        for e in item["entries"]:
            obs = load_observation(str(root / e["obs"]))
            if not 0 <= e["index"] < len(obs) or int(obs.trace[e["index"]]) != e["vertex"]:
                raise VisibilityError(f"{e['obs']}: annotated vertex {e['vertex']} is not observed at "
                                      f"index {e['index']}")
            entries.append(AnnotatedPoint(obs, e["index"], e["obs"]))
        out.append(FewShotAnnotation(entries, task=item.get("task", ""), landmark=item.get("landmark", "")))
    return out


def adaptation_loss(
    model: PointEncoder,
    annotations: Sequence[FewShotAnnotation],
    config: TrainConfig,
    rng: np.random.Generator,
) -> torch.Tensor:
    """Mean InfoNCE over every ordered pair of annotated points, functional point as positive."""
    items = []
    for annotation in annotations:
        fields = [forward(model, e.obs, grad=True).features for e in annotation.entries]
        for i, a in enumerate(annotation.entries):
            for j, b in enumerate(annotation.entries):
                if i == j:
                    continue
                negatives = sample_negatives(b.obs, b.index, config.negatives, rng)
                items.append(info_nce(fields[i][a.index][None], fields[j][b.index][None],
                                      fields[j][torch.as_tensor(negatives)][None], config.temperature,
                                      include_positive=config.include_positive))
    return torch.cat(items).mean()


def adapt_few_shot(
    model: PointEncoder,
    annotations: Sequence[FewShotAnnotation],
    config: Optional[TrainConfig] = None,
    steps: Optional[int] = None,
    history: Optional[List[float]] = None,
) -> PointEncoder:
    """Fine-tune a copy of ``model`` so annotated points become mutual positives.

    Uses ``adapt_learning_rate`` and ``adapt_steps``; negatives per step come
    from the (seed, step, 2) stream.

    Raises:
        ValueError: No annotations
        DivergenceError: The loss or an activation became non-finite
    """
    config = config or TrainConfig()
    if not annotations:
        raise ValueError("adapt_few_shot needs at least one annotation")
    model = copy.deepcopy(model)
    optimizer = make_optimizer(model.parameters(), config.optimizer, config.adapt_learning_rate)
    steps = config.adapt_steps if steps is None else steps
    for step in range(steps):
        optimizer.zero_grad()
        try:
            loss = adaptation_loss(model, annotations, config, np.random.default_rng([config.seed, step, 2]))
        except NonFiniteActivation as e:
            raise DivergenceError(f"Adaptation step {step}: {e}") from e
        if not torch.isfinite(loss):
            raise DivergenceError(f"Adaptation step {step}: non-finite loss {float(loss)}")
        loss.backward()
        optimizer.step()
        if history is not None:
            history.append(float(loss))
    logger.info("Adapted on %d annotations for %d steps", len(annotations), steps)
    return model
