"""Positive/negative sampling for correspondence training and failure mining."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from core.config import TrainConfig
from core.errors import CounterpartInvisible, DatasetError
from core.log import get_logger
from modules.descriptor.field import DescriptorField, forward, similarities
from modules.descriptor.network import PointEncoder
from modules.percept.observation import PointCloudObs
from modules.percept.tracing import canonical_distances, trace_correspondence
from modules.training.dataset import CorrDataset, GarmentRecord

logger = get_logger("training")

ObsRef = Tuple[int, int]


class PairKind(str, Enum):
    CROSS_DEFORM = "CrossDeform"
    CROSS_OBJECT = "CrossObject"


@dataclass
class PairSample:
    """Items drawn from one observation pair.

    Attributes:
        kind: How positives were obtained
        ref_a: (garment, observation) of the anchors
        ref_b: (garment, observation) of positives and negatives
        anchors: (P,) point indices into observation a
        positives: (P,) point indices into observation b
        negatives: (P, m) point indices into observation b
    """
    kind: PairKind
    ref_a: ObsRef
    ref_b: ObsRef
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __len__(self) -> int:
        return len(self.anchors)


@dataclass
class CorrPairBatch:
    pairs: List[PairSample] = field(default_factory=list)

    def __len__(self) -> int:
        return sum(len(p) for p in self.pairs)

    def of_kind(self, kind: PairKind) -> List[PairSample]:
        return [p for p in self.pairs if p.kind == kind]

    def describe(self) -> List[dict]:
        return [{"kind": p.kind.value, "a": list(p.ref_a), "b": list(p.ref_b),
                 "anchors": p.anchors.tolist(), "positives": p.positives.tolist()}
                for p in self.pairs]


def observation(dataset: CorrDataset, ref: ObsRef) -> PointCloudObs:
    return dataset.records[ref[0]].observations[ref[1]]


# =============================================================================
# POSITIVES
# =============================================================================

def sample_negatives(obs: PointCloudObs, positive: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """m uniform points of ``obs`` that do not carry the positive's vertex."""
    eligible = np.flatnonzero(obs.trace != obs.trace[positive])
    if not len(eligible):
        raise DatasetError(f"Observation of {obs.mesh_id} has no negatives besides vertex "
                           f"{obs.trace[positive]}")
    return rng.choice(eligible, size=m, replace=m > len(eligible))


def cross_object_positive(
    src: GarmentRecord,
    obs_a: PointCloudObs,
    anchor: int,
    dst: GarmentRecord,
    obs_b: PointCloudObs,
) -> Optional[int]:
    """Counterpart of ``obs_a[anchor]`` in another garment's observation.

    The anchor's vertex is located relative to its nearest skeleton keypoint
    in the canonical frame; the same offset from the matching keypoint of the
    other garment picks the nearest vertex there, which is then traced into
    ``obs_b``. Returns None if that vertex is not observed.
    """
    v = int(obs_a.trace[anchor])
    canon = src.mesh.vertices[v]
    kp_src = src.skeleton.keypoints
    kp_dst = dst.skeleton.keypoints
    s = min(len(kp_src), len(kp_dst))
    k = int(np.argmin(np.linalg.norm(kp_src[:s] - canon[None, :], axis=1)))
    if np.array_equal(canon, kp_src[k]):
        target = int(dst.skeleton.vertex_ids[k])
    else:
        goal = kp_dst[k] + (canon - kp_src[k])
        target = int(np.argmin(np.linalg.norm(dst.mesh.vertices - goal[None, :], axis=1)))
    return obs_b.first_index.get(target)


def keypoint_anchor(
    src: GarmentRecord,
    obs_a: PointCloudObs,
    dst: GarmentRecord,
    obs_b: PointCloudObs,
    rng: np.random.Generator,
) -> Optional[Tuple[int, int]]:
    """A skeleton keypoint observed in both observations, as (anchor, positive)."""
    s = min(src.skeleton.size, dst.skeleton.size)
    both = [k for k in range(s)
            if int(src.skeleton.vertex_ids[k]) in obs_a.first_index
            and int(dst.skeleton.vertex_ids[k]) in obs_b.first_index]
    if not both:
        return None
    k = both[int(rng.integers(len(both)))]
    return (obs_a.first_index[int(src.skeleton.vertex_ids[k])],
            obs_b.first_index[int(dst.skeleton.vertex_ids[k])])


# =============================================================================
# BATCHES
# =============================================================================

def _choose_kind(dataset: CorrDataset, config: TrainConfig, rng: np.random.Generator) -> PairKind:
    if not config.use_cross_object:
        return PairKind.CROSS_DEFORM
    if config.use_cross_deformation and not any(dataset.same_category(g) for g in dataset.deformable()):
        return PairKind.CROSS_DEFORM
    if not config.use_cross_deformation:
        return PairKind.CROSS_OBJECT
    return PairKind.CROSS_OBJECT if rng.uniform() < config.cross_object_fraction else PairKind.CROSS_DEFORM


def _refs(dataset: CorrDataset, kind: PairKind, rng: np.random.Generator) -> Tuple[ObsRef, ObsRef]:
    usable = dataset.deformable()
    if kind == PairKind.CROSS_DEFORM:
        g = usable[int(rng.integers(len(usable)))]
        a, b = rng.choice(len(dataset.records[g].observations), size=2, replace=False)
        return (g, int(a)), (g, int(b))
    pool = [g for g in usable if dataset.same_category(g)]
    if not pool:
        raise DatasetError("Cross-object sampling needs two observed garments of one category")
    g = pool[int(rng.integers(len(pool)))]
    others = dataset.same_category(g)
    h = others[int(rng.integers(len(others)))]
    a = int(rng.integers(len(dataset.records[g].observations)))
    b = int(rng.integers(len(dataset.records[h].observations)))
    return (g, a), (h, b)


def _draw_item(dataset: CorrDataset, kind: PairKind, ref_a: ObsRef, ref_b: ObsRef,
               config: TrainConfig, rng: np.random.Generator) -> Optional[Tuple[int, int]]:
    obs_a, obs_b = observation(dataset, ref_a), observation(dataset, ref_b)
    src, dst = dataset.records[ref_a[0]], dataset.records[ref_b[0]]
    for _ in range(config.max_resample):
        if kind == PairKind.CROSS_OBJECT and rng.uniform() < config.keypoint_anchor_fraction:
            found = keypoint_anchor(src, obs_a, dst, obs_b, rng)
            if found is not None:
                return found
            continue
        anchor = int(rng.integers(len(obs_a)))
        if kind == PairKind.CROSS_DEFORM:
            positive = trace_correspondence(obs_a, obs_b, anchor)
        else:
            positive = cross_object_positive(src, obs_a, anchor, dst, obs_b)
        if positive is not None:
            return anchor, positive
    return None


def sample_batch(dataset: CorrDataset, config: TrainConfig, rng: np.random.Generator) -> CorrPairBatch:
    """Draw ``pairs_per_batch`` observation pairs with ``positives_per_pair`` items each.

    Items whose positive stays unobserved after ``max_resample`` draws are
    dropped; every emitted positive is observed by construction.

    Raises:
        DatasetError: Fewer than 2 garments with 2 observations each
    """
    dataset.validate()
    batch = CorrPairBatch()
    for _ in range(config.pairs_per_batch):
        kind = _choose_kind(dataset, config, rng)
        ref_a, ref_b = _refs(dataset, kind, rng)
        obs_b = observation(dataset, ref_b)
        anchors, positives, negatives = [], [], []
        for _ in range(config.positives_per_pair):
            item = _draw_item(dataset, kind, ref_a, ref_b, config, rng)
            if item is None:
                logger.debug("No observed positive for %s pair %s -> %s", kind.value, ref_a, ref_b)
                continue
            anchors.append(item[0])
            positives.append(item[1])
            negatives.append(sample_negatives(obs_b, item[1], config.negatives, rng))
        if anchors:
            batch.pairs.append(PairSample(
                kind=kind, ref_a=ref_a, ref_b=ref_b,
                anchors=np.array(anchors, dtype=np.int64),
                positives=np.array(positives, dtype=np.int64),
                negatives=np.stack(negatives).astype(np.int64),
            ))
    return batch


# =============================================================================
# FAILURE MINING
# =============================================================================

def failure_threshold(record: GarmentRecord, config: TrainConfig) -> float:
    """beta in meters: the configured value, else a fraction of the bbox diagonal."""
    return config.beta if config.beta is not None else config.beta_fraction * record.mesh.bbox_diagonal


def failures_from_fields(
    field_a: DescriptorField,
    field_b: DescriptorField,
    record: GarmentRecord,
    probe: int,
    alpha: float,
    beta: float,
) -> List[Tuple[int, float]]:
    """Points of observation b that look like the probe but lie far from its counterpart.

    Returns every (index, d) with similarity(probe, index) > alpha and
    canonical distance d (meters) to the probe's vertex > beta, ordered by index.

    Raises:
        CounterpartInvisible: The probe's vertex is not observed in b
    """
    obs_a, obs_b = field_a.obs, field_b.obs
    counterpart = trace_correspondence(obs_a, obs_b, probe)
    if counterpart is None:
        raise CounterpartInvisible(f"Vertex {obs_a.trace[probe]} of {obs_a.mesh_id} not observed")
    scores = similarities(field_a, probe, field_b)
    d = canonical_distances(record.mesh, int(obs_a.trace[probe]), obs_b.trace)
    hits = np.flatnonzero((scores > alpha) & (d > beta))
    return [(int(j), float(d[j])) for j in hits]


def collect_failures(
    model: PointEncoder,
    record: GarmentRecord,
    obs_a: PointCloudObs,
    obs_b: PointCloudObs,
    probe: int,
    alpha: float,
    beta: float,
) -> List[Tuple[int, float]]:
    """Failure set of ``probe`` under ``model``; see failures_from_fields."""
    if trace_correspondence(obs_a, obs_b, probe) is None:
        raise CounterpartInvisible(f"Vertex {obs_a.trace[probe]} of {obs_a.mesh_id} not observed")
    return failures_from_fields(forward(model, obs_a), forward(model, obs_b), record, probe, alpha, beta)
