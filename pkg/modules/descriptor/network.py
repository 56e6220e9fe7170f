"""Hierarchical point encoder (float64).

Per-point shared encoder, two k-nearest-neighbour grouping stages with max
pooling, a global max-pooled context concatenated back to every point, and a
two-layer head. Outputs are row-normalised.

Layer indices used in NonFiniteActivation:
    0 encoder, 1 first grouping stage, 2 second grouping stage, 3 head hidden, 4 output
"""

from __future__ import annotations

import dataclasses
from typing import Dict, List, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from core.config import DescriptorConfig
from core.errors import CheckpointError, ConfigMismatchError, NonFiniteActivation
from core.storage import load_checkpoint, save_checkpoint

torch.set_default_dtype(torch.float64)

_ACTIVATIONS = {
    "gelu": F.gelu,
    "relu": F.relu,
    "tanh": torch.tanh,
}


def index_points(features: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """Gather rows: features (N, C), idx (N, k) -> (N, k, C)."""
    return features[idx]


def _check(h: torch.Tensor, layer: int) -> torch.Tensor:
    if not torch.isfinite(h).all():
        raise NonFiniteActivation(layer)
    return h


class PointEncoder(nn.Module):
    """Maps an (N, 3) cloud and its (N, k) neighbour table to (N, d) unit rows."""

    def __init__(self, config: Optional[DescriptorConfig] = None):
        super().__init__()
        self.config = config or DescriptorConfig()
        c = self.config
        s1, s2 = c.stage_widths
        self.act = _ACTIVATIONS[c.activation]
        self.encoder = nn.Linear(3, c.encoder_width)
        self.stage1 = nn.Linear(c.encoder_width + 3, s1)
        self.stage2 = nn.Linear(s1 + 3, s2)
        self.hidden = nn.Linear(c.encoder_width + s1 + 2 * s2, c.head_width)
        self.head = nn.Linear(c.head_width, c.feature_dim)
        self.double()

    def embed(self, points: torch.Tensor, neighbors: torch.Tensor) -> torch.Tensor:
        """Unnormalised per-point output (N, d)."""
        centred = points - points.mean(dim=0, keepdim=True)
        rel = index_points(centred, neighbors) - centred[:, None, :]

        h0 = _check(self.act(self.encoder(centred)), 0)
        g1 = torch.cat([index_points(h0, neighbors), rel], dim=-1)
        h1 = _check(self.act(self.stage1(g1)).max(dim=1).values, 1)
        g2 = torch.cat([index_points(h1, neighbors), rel], dim=-1)
        h2 = _check(self.act(self.stage2(g2)).max(dim=1).values, 2)
        context = h2.max(dim=0, keepdim=True).values.expand(len(points), -1)

        hidden = _check(self.act(self.hidden(torch.cat([h0, h1, h2, context], dim=-1))), 3)
        return _check(self.head(hidden), 4)

    def forward(self, points: torch.Tensor, neighbors: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.embed(points, neighbors), dim=1, eps=1e-12)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def shapes(self) -> Dict[str, List[int]]:
        return {name: list(p.shape) for name, p in self.named_parameters()}

    def flat_parameters(self) -> np.ndarray:
        return nn.utils.parameters_to_vector(self.parameters()).detach().cpu().numpy().copy()

    def load_flat_parameters(self, vector: np.ndarray) -> None:
        vector = torch.as_tensor(np.asarray(vector, dtype=np.float64))
        if vector.numel() != self.parameter_count():
            raise ConfigMismatchError(
                f"Parameter vector has {vector.numel()} entries, model needs {self.parameter_count()}")
        with torch.no_grad():
            nn.utils.vector_to_parameters(vector.clone(), self.parameters())


# Descriptor models are point encoders configured for d-dimensional output.
DescriptorModel = PointEncoder


def build_model(config: Optional[DescriptorConfig] = None, seed: int = 0) -> PointEncoder:
    """Seeded model construction."""
    generator_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        return PointEncoder(config)
    finally:
        torch.random.set_rng_state(generator_state)


def save_model(model: PointEncoder, path: str, kind: str = "descriptor", extra: Optional[dict] = None) -> str:
    return save_checkpoint(path, model.flat_parameters(), kind,
                           dataclasses.asdict(model.config), model.shapes(), extra)


def load_model(path: str, config: Optional[DescriptorConfig] = None, kind: str = "descriptor") -> PointEncoder:
    """Load a descriptor checkpoint.

    Raises:
        ConfigMismatchError: ``config`` differs from the stored one
        CheckpointError: Corrupt file
    """
    expected = dataclasses.asdict(config) if config is not None else None
    header, vector = load_checkpoint(path, kind=kind, config=expected)
    try:
        stored = DescriptorConfig(**header["config"])
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: unusable config in header ({e})") from e
    model = PointEncoder(stored)
    model.load_flat_parameters(vector)
    return model
