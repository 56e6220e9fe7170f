"""Correspondence scoring suites.

All distances are measured between traced vertices in the canonical flat
pose, so scores do not depend on how a garment is deformed.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.config import TrainConfig
from core.errors import CounterpartInvisible
from core.log import get_logger
from modules.descriptor.field import DescriptorField, best_match, forward, random_field
from modules.descriptor.network import PointEncoder
from modules.garment.generator import GarmentMesh
from modules.percept.observation import PointCloudObs
from modules.skeleton.skeleton import Skeleton
from modules.training.adaptation import FewShotAnnotation
from modules.training.dataset import CorrDataset
from modules.training.sampling import failure_threshold, failures_from_fields

logger = get_logger("validation")

ACCURACY_FRACTION = 0.15

FieldFn = Callable[[PointCloudObs], DescriptorField]
ProbeRef = Tuple[int, int, int, int]  # garment, obs a, obs b, probe index in a


def model_fields(model: PointEncoder) -> FieldFn:
    return lambda obs: forward(model, obs)


def random_fields(dim: int = 64, seed: int = 0) -> FieldFn:
    """Chance-level baseline: fresh random unit rows per observation, in call order."""
    seeds = itertools.count(seed)
    return lambda obs: random_field(obs, dim, next(seeds))


@dataclass
class AccuracyResult:
    correct: int = 0
    total: int = 0

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def __add__(self, other: "AccuracyResult") -> "AccuracyResult":
        return AccuracyResult(self.correct + other.correct, self.total + other.total)


def match_accuracy(field_a: DescriptorField, field_b: DescriptorField, mesh: GarmentMesh,
                   fraction: float = ACCURACY_FRACTION) -> AccuracyResult:
    """Queries of a whose best match in b lies within ``fraction`` of the bbox diagonal.

    Only queries whose vertex is observed in b count.
    """
    obs_a, obs_b = field_a.obs, field_b.obs
    queries = np.flatnonzero(np.isin(obs_a.trace, obs_b.trace))
    if not len(queries):
        return AccuracyResult()
    scores = field_a.numpy()[queries] @ field_b.numpy().T
    matched = obs_b.trace[np.argmax(scores, axis=1)]
    d = np.linalg.norm(mesh.vertices[obs_a.trace[queries]] - mesh.vertices[matched], axis=1)
    return AccuracyResult(int(np.sum(d <= fraction * mesh.bbox_diagonal)), int(len(queries)))


def dataset_accuracy(fields: FieldFn, dataset: CorrDataset, fraction: float = ACCURACY_FRACTION,
                     max_observations: Optional[int] = None) -> AccuracyResult:
    """Accuracy over every ordered pair of observations of each garment."""
    total = AccuracyResult()
    for record in dataset.records:
        observations = record.observations[:max_observations]
        computed = [fields(o) for o in observations]
        for a, b in itertools.permutations(range(len(computed)), 2):
            total = total + match_accuracy(computed[a], computed[b], record.mesh, fraction)
    return total


def probe_suite(dataset: CorrDataset, count: int, seed: int = 0) -> List[ProbeRef]:
    """Fixed set of probes whose counterpart is observed; deterministic in ``seed``."""
    rng = np.random.default_rng([seed, 4])
    garments = dataset.deformable()
    if not garments:
        return []
    suite: List[ProbeRef] = []
    attempts = 0
    while len(suite) < count and attempts < 20 * count:
        attempts += 1
        g = int(garments[rng.integers(len(garments))])
        observations = dataset.records[g].observations
        a, b = (int(i) for i in rng.choice(len(observations), 2, replace=False))
        probe = int(rng.integers(len(observations[a])))
        if int(observations[a].trace[probe]) in observations[b].first_index:
            suite.append((g, a, b, probe))
    return suite


def mean_failure_size(fields: FieldFn, dataset: CorrDataset, suite: Sequence[ProbeRef],
                      config: Optional[TrainConfig] = None) -> float:
    """Mean failure-set size over the suite at the configured alpha and beta."""
    config = config or TrainConfig()
    cache: Dict[Tuple[int, int], DescriptorField] = {}

    def field_of(g: int, i: int) -> DescriptorField:
        if (g, i) not in cache:
            cache[(g, i)] = fields(dataset.records[g].observations[i])
        return cache[(g, i)]

    sizes = []
    for g, a, b, probe in suite:
        record = dataset.records[g]
        try:
            found = failures_from_fields(field_of(g, a), field_of(g, b), record, probe,
                                         config.alpha, failure_threshold(record, config))
        except CounterpartInvisible:
            continue
        sizes.append(len(found))
    return float(np.mean(sizes)) if sizes else 0.0


def functional_distance(fields: FieldFn, annotation: FewShotAnnotation,
                        held_out: Sequence[Tuple[PointCloudObs, GarmentMesh, int]]) -> float:
    """Mean canonical distance (m) from each annotated point's best match to the functional vertex.

    Args:
        held_out: (observation, its mesh, ground-truth functional vertex) triples
    """
    sources = [(fields(e.obs), e.index) for e in annotation.entries]
    distances = []
    for obs, mesh, vertex in held_out:
        target = fields(obs)
        for source, index in sources:
            matched = int(obs.trace[best_match(source, index, target)])
            distances.append(float(np.linalg.norm(mesh.vertices[matched] - mesh.vertices[vertex])))
    return float(np.mean(distances)) if distances else 0.0


def skeleton_error(predicted: Skeleton, mesh: GarmentMesh) -> float:
    """Mean canonical distance of named keypoints to their landmarks, in bbox diagonals."""
    errors = [np.linalg.norm(mesh.vertices[v] - mesh.landmark_position(name))
              for name, v in zip(predicted.names, predicted.vertex_ids) if name in mesh.landmarks]
    if not errors:
        raise ValueError(f"No keypoint of the skeleton names a landmark of {mesh.mesh_id}")
    return float(np.mean(errors) / mesh.bbox_diagonal)


@dataclass
class ScoreReport:
    """Correspondence scores of one checkpoint on one dataset."""
    accuracy: float
    queries: int
    random_accuracy: float
    probes: int
    failure_size: float
    functional_distance: Optional[float] = None
    skeleton_error: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def score_model(
    model: PointEncoder,
    dataset: CorrDataset,
    config: Optional[TrainConfig] = None,
    probes: int = 200,
    seed: int = 0,
    max_observations: Optional[int] = None,
) -> ScoreReport:
    """Accuracy, random baseline and mean failure-set size for ``model``."""
    config = config or TrainConfig()
    fields = model_fields(model)
    accuracy = dataset_accuracy(fields, dataset, max_observations=max_observations)
    baseline = dataset_accuracy(random_fields(model.config.feature_dim, seed), dataset,
                                max_observations=max_observations)
    suite = probe_suite(dataset, probes, seed)
    failures = mean_failure_size(fields, dataset, suite, config)
    logger.info("Scored %d queries: accuracy %.3f (random %.3f), failures %.2f",
                accuracy.total, accuracy.accuracy, baseline.accuracy, failures)
    return ScoreReport(accuracy=accuracy.accuracy, queries=accuracy.total,
                       random_accuracy=baseline.accuracy, probes=len(suite), failure_size=failures)
