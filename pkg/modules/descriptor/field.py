"""Descriptor fields: per-point unit features of one observation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from modules.descriptor.network import PointEncoder
from modules.percept.observation import PointCloudObs


@dataclass
class DescriptorField:
    """(N, d) unit rows for one observation. ``features`` may carry autograd history."""
    features: torch.Tensor
    obs: PointCloudObs

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def numpy(self) -> np.ndarray:
        return self.features.detach().cpu().numpy()

    def detached(self) -> "DescriptorField":
        return DescriptorField(self.features.detach(), self.obs)


def obs_tensors(obs: PointCloudObs, k: int):
    points = torch.as_tensor(obs.points, dtype=torch.float64)
    neighbors = torch.as_tensor(obs.neighbors(k), dtype=torch.long)
    return points, neighbors


def forward(model: PointEncoder, obs: PointCloudObs, grad: bool = False) -> DescriptorField:
    """Features of ``obs``; pass ``grad=True`` to keep the autograd graph.

    Raises:
        ValueError: Fewer points than the neighbourhood size
        NonFiniteActivation: A layer produced NaN/Inf
    """
    k = model.config.neighbors
    if len(obs) < k:
        raise ValueError(f"Observation has {len(obs)} points, fewer than k={k}")
    points, neighbors = obs_tensors(obs, k)
    with torch.set_grad_enabled(grad):
        features = model(points, neighbors)
    return DescriptorField(features, obs)


def backward(model: PointEncoder, obs: PointCloudObs, upstream: np.ndarray) -> np.ndarray:
    """Parameter gradient of sum(upstream * features) as one flat vector.

    Raises:
        ValueError: ``upstream`` shape differs from the feature shape
    """
    field = forward(model, obs, grad=True)
    upstream = torch.as_tensor(np.asarray(upstream, dtype=np.float64))
    if tuple(upstream.shape) != tuple(field.features.shape):
        raise ValueError(f"Upstream gradient shape {tuple(upstream.shape)} != "
                         f"feature shape {tuple(field.features.shape)}")
    params = list(model.parameters())
    grads = torch.autograd.grad(field.features, params, grad_outputs=upstream, allow_unused=True)
    flat = [torch.zeros_like(p).reshape(-1) if g is None else g.reshape(-1)
            for p, g in zip(params, grads)]
    return torch.cat(flat).detach().cpu().numpy()


def similarity(field_a: DescriptorField, i: int, field_b: DescriptorField, j: int) -> float:
    """Dot product of two unit rows, clamped to [-1, 1]."""
    value = float(torch.dot(field_a.features[i].detach(), field_b.features[j].detach()))
    return min(1.0, max(-1.0, value))


def similarities(field_a: DescriptorField, i: int, field_b: DescriptorField) -> np.ndarray:
    scores = field_b.numpy() @ field_a.numpy()[i]
    return np.clip(scores, -1.0, 1.0)


def best_match(field_a: DescriptorField, i: int, field_b: DescriptorField) -> int:
    """argmax_j similarity(a_i, b_j); ties go to the lowest index."""
    if len(field_b) == 0:
        raise ValueError("best_match needs a non-empty target field")
    return int(np.argmax(similarities(field_a, i, field_b)))


def random_field(obs: PointCloudObs, dim: int = 64, seed: int = 0) -> DescriptorField:
    """Random unit features: the chance-level baseline."""
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(len(obs), dim))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    return DescriptorField(torch.as_tensor(raw), obs)


def field_from_array(features: np.ndarray, obs: Optional[PointCloudObs] = None) -> DescriptorField:
    """Wrap given unit rows (tests, baselines)."""
    features = np.asarray(features, dtype=np.float64)
    if obs is None:
        obs = PointCloudObs(points=np.zeros((len(features), 3)),
                            trace=np.arange(len(features)), mesh_id="array")
    return DescriptorField(torch.as_tensor(features), obs)
