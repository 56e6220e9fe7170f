"""Learned category skeletons.

A shared point encoder scores every observed point for each of s keypoints;
keypoints are softmax-weighted averages of the observed points, so they stay
on the cloth. Every keypoint pair carries a learned activation and 16
trainable sample positions along the segment. Training minimises

    coverage  : each observed point pays the distance to its nearest active
                edge (composite over edges sorted by distance) plus a residual
                for whatever no edge covers
    existence : activation-weighted distance of edge samples to the cloud
    spread    : Gaussian repulsion between keypoints
    anchor    : the first keypoints of one seed garment sit on its template
                landmarks, which fixes the keypoint order for the category

with distances in units of each garment's bbox diagonal.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from core.config import SkeletonConfig
from core.errors import CheckpointError, DivergenceError
from core.log import get_logger
from core.storage import load_checkpoint, save_checkpoint
from modules.descriptor.network import PointEncoder
from modules.percept.observation import PointCloudObs
from modules.skeleton.skeleton import MAX_KEYPOINTS, Skeleton, pair_count

logger = get_logger("skeleton")

RESIDUAL_COST = 1.0


class SkeletonModel(nn.Module):
    """Keypoint heat head on a point encoder, plus edge activations and offsets."""

    def __init__(self, config: SkeletonConfig, names: Optional[Sequence[str]] = None):
        super().__init__()
        s = config.keypoints
        if not 2 <= s <= MAX_KEYPOINTS:
            raise ValueError(f"keypoint count must be in [2, {MAX_KEYPOINTS}], got {s}")
        self.config = config
        self.encoder = PointEncoder(config.encoder)
        self.heat = nn.Linear(config.encoder.feature_dim, s)
        self.log_sharpness = nn.Parameter(torch.tensor(np.log(10.0)))
        self.edge_logits = nn.Parameter(torch.zeros(pair_count(s)))
        samples = torch.linspace(0.0, 1.0, config.edge_samples)
        self.edge_offsets = nn.Parameter(samples.repeat(pair_count(s), 1))
        names = list(names or [])
        self.names = names[:s] + [f"k{i}" for i in range(len(names), s)]
        iu, ju = np.triu_indices(s, k=1)
        self.register_buffer("pair_i", torch.as_tensor(iu, dtype=torch.long))
        self.register_buffer("pair_j", torch.as_tensor(ju, dtype=torch.long))
        self.double()

    @property
    def size(self) -> int:
        return self.config.keypoints

    def activations(self) -> torch.Tensor:
        return torch.sigmoid(self.edge_logits)

    def offsets(self) -> torch.Tensor:
        return self.edge_offsets.clamp(0.0, 1.0)

    def keypoints(self, points: torch.Tensor, neighbors: torch.Tensor) -> torch.Tensor:
        """(s, 3) softmax-weighted point averages."""
        raw = self.heat(self.encoder.embed(points, neighbors))
        z = (raw - raw.mean(dim=0, keepdim=True)) / (raw.std(dim=0, keepdim=True) + 1e-9)
        weights = torch.softmax(torch.exp(self.log_sharpness) * z, dim=0)
        return weights.T @ points

    def edge_samples(self, keypoints: torch.Tensor) -> torch.Tensor:
        """(pairs, T, 3) sample positions along every keypoint pair."""
        start = keypoints[self.pair_i][:, None, :]
        end = keypoints[self.pair_j][:, None, :]
        return start + self.offsets()[:, :, None] * (end - start)

    def flat_parameters(self) -> np.ndarray:
        return nn.utils.parameters_to_vector(self.parameters()).detach().numpy().copy()

    def load_flat_parameters(self, vector: np.ndarray) -> None:
        with torch.no_grad():
            nn.utils.vector_to_parameters(torch.as_tensor(np.asarray(vector, dtype=np.float64)),
                                          self.parameters())


# =============================================================================
# LOSSES
# =============================================================================

def coverage_loss(points: torch.Tensor, samples: torch.Tensor, activations: torch.Tensor,
                  scale: float = 1.0) -> torch.Tensor:
    """Mean over points of the composite distance to active edges.

    Edges are visited from nearest to farthest; edge k is charged
    d_k * a_k * prod_{l<k}(1 - a_l), and the remainder prod(1 - a) pays the
    residual cost.
    """
    pairs, per_edge = samples.shape[:2]
    dist = torch.cdist(points, samples.reshape(-1, 3)).reshape(len(points), pairs, per_edge)
    dist = dist.min(dim=2).values / scale
    order = torch.argsort(dist, dim=1)
    d_sorted = torch.gather(dist, 1, order)
    a_sorted = activations[order]
    keep = torch.cumprod(1.0 - a_sorted, dim=1)
    before = torch.cat([torch.ones_like(keep[:, :1]), keep[:, :-1]], dim=1)
    cost = (d_sorted * a_sorted * before).sum(dim=1) + RESIDUAL_COST * keep[:, -1]
    return cost.mean()


def existence_loss(points: torch.Tensor, samples: torch.Tensor, activations: torch.Tensor,
                   scale: float = 1.0) -> torch.Tensor:
    flat = samples.reshape(-1, 3)
    nearest = torch.cdist(flat, points).min(dim=1).values.reshape(samples.shape[:2]) / scale
    return (activations * nearest.mean(dim=1)).mean()


def spread_loss(keypoints: torch.Tensor, sigma: float, scale: float = 1.0) -> torch.Tensor:
    s = len(keypoints)
    iu = torch.triu_indices(s, s, offset=1)
    d2 = ((keypoints[iu[0]] - keypoints[iu[1]]) / scale).pow(2).sum(dim=1)
    return torch.exp(-d2 / sigma ** 2).mean()


def anchor_loss(keypoints: torch.Tensor, targets: torch.Tensor, scale: float = 1.0) -> torch.Tensor:
    m = min(len(keypoints), len(targets))
    return ((keypoints[:m] - targets[:m]).norm(dim=1) / scale).mean()


# =============================================================================
# TRAINING / PREDICTION
# =============================================================================

@dataclass
class _Sample:
    points: torch.Tensor
    neighbors: torch.Tensor
    scale: float


def _prepare(obs: PointCloudObs, count: int, k: int, rng: np.random.Generator) -> _Sample:
    idx = np.arange(len(obs)) if len(obs) <= count else np.sort(rng.choice(len(obs), count, replace=False))
    sub = PointCloudObs(points=obs.points[idx], trace=obs.trace[idx], mesh_id=obs.mesh_id,
                        category=obs.category)
    return _Sample(points=torch.as_tensor(sub.points), neighbors=torch.as_tensor(sub.neighbors(k)),
                   scale=max(sub.bbox_diagonal(), 1e-9))


def skeleton_losses(model: SkeletonModel, sample: _Sample,
                    anchor: Optional[torch.Tensor] = None) -> Dict[str, torch.Tensor]:
    c = model.config
    kp = model.keypoints(sample.points, sample.neighbors)
    samples = model.edge_samples(kp)
    a = model.activations()
    terms = {
        "coverage": coverage_loss(sample.points, samples, a, sample.scale),
        "existence": existence_loss(sample.points, samples, a, sample.scale),
        "spread": spread_loss(kp, c.spread_sigma, sample.scale),
    }
    terms["total"] = (c.coverage_weight * terms["coverage"] + c.existence_weight * terms["existence"]
                      + c.spread_weight * terms["spread"])
    if anchor is not None:
        terms["anchor"] = anchor_loss(kp, anchor, sample.scale)
        terms["total"] = terms["total"] + c.anchor_weight * terms["anchor"]
    return terms


def train_skeleton(
    observations: Sequence[PointCloudObs],
    s: int,
    config: Optional[SkeletonConfig] = None,
    seed: int = 0,
    anchor: Optional[Skeleton] = None,
    anchor_index: int = 0,
    on_step=None,
) -> SkeletonModel:
    """Fit a category skeleton on flat observations.

    Args:
        observations: At least 4 flat observations of one category
        s: Keypoint count (2..50)
        config: Skeleton training parameters
        seed: Seed for initialisation and point subsampling
        anchor: Analytic skeleton of ``observations[anchor_index]``; its
            keypoints fix the order of the first keypoints
        on_step: Optional callback(step, mean_loss)

    Returns:
        Trained SkeletonModel

    Raises:
        ValueError: Fewer than 4 observations, mixed categories or s < 2
        DivergenceError: Loss became non-finite
    """
    config = dataclasses.replace(config or SkeletonConfig(), keypoints=s)
    if len(observations) < 4:
        raise ValueError(f"Skeleton training needs at least 4 flat garments, got {len(observations)}")
    categories = sorted({o.category for o in observations})
    if len(categories) > 1:
        raise ValueError(f"Skeleton training needs one category, got {categories}")

    torch.manual_seed(seed)
    model = SkeletonModel(config, names=anchor.names if anchor is not None else None)
    rng = np.random.default_rng(seed)
    k = config.encoder.neighbors
    samples = [_prepare(o, config.points, k, rng) for o in observations]
    anchor_target = torch.as_tensor(anchor.keypoints) if anchor is not None else None

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    for step_index in range(config.steps):
        optimizer.zero_grad()
        total = torch.zeros(())
        for g, sample in enumerate(samples):
            target = anchor_target if (anchor_target is not None and g == anchor_index) else None
            terms = skeleton_losses(model, sample, target)
            if not torch.isfinite(terms["total"]):
                detail = {name: float(v) for name, v in terms.items()}
                raise DivergenceError(f"Skeleton loss non-finite at step {step_index}, "
                                      f"garment {g}: {detail}")
            total = total + terms["total"] / len(samples)
        total.backward()
        optimizer.step()
        if on_step is not None:
            on_step(step_index, float(total))
        if step_index % 50 == 0:
            logger.debug("skeleton step %d loss %.5f", step_index, float(total))
    return model


def predict_skeleton(model: SkeletonModel, obs: PointCloudObs) -> Skeleton:
    """Keypoints snapped to their nearest observed point (and its traced vertex)."""
    with torch.no_grad():
        k = model.config.encoder.neighbors
        kp = model.keypoints(torch.as_tensor(obs.points), torch.as_tensor(obs.neighbors(k))).numpy()
        activations = model.activations().numpy()
    idx = np.array([obs.nearest_point(p) for p in kp], dtype=np.int64)
    return Skeleton(
        names=list(model.names),
        keypoints=obs.points[idx].copy(),
        vertex_ids=obs.trace[idx].copy(),
        activations=activations.copy(),
    )


def save_skeleton_model(model: SkeletonModel, path: str) -> str:
    shapes = {name: list(p.shape) for name, p in model.named_parameters()}
    return save_checkpoint(path, model.flat_parameters(), "skeleton",
                           dataclasses.asdict(model.config), shapes, extra={"names": model.names})


def load_skeleton_model(path: str, config: Optional[SkeletonConfig] = None) -> SkeletonModel:
    expected = dataclasses.asdict(config) if config is not None else None
    header, vector = load_checkpoint(path, kind="skeleton", config=expected)
    try:
        stored = SkeletonConfig(**header["config"])
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: unusable config in header ({e})") from e
    model = SkeletonModel(stored, names=header.get("extra", {}).get("names"))
    model.load_flat_parameters(vector)
    return model
