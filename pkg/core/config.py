"""Configuration for corrgarment.

Defaults live in the dataclasses below (desk scale). The bundled
``defaults.json`` holds named presets (``desk``, ``full``, ``test``) and the per-category
garment size ranges used by the generator CLI. A user JSON file and a handful
of environment variables (loaded through python-dotenv) override both.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from core.errors import ConfigError

load_dotenv()

DEFAULTS_PATH = Path(__file__).parent / "defaults.json"


def _check(problems: List[str], section: str) -> None:
    if problems:
        raise ConfigError(f"Invalid {section} config: {'; '.join(problems)}")


# =============================================================================
# SECTIONS
# =============================================================================

@dataclass
class GarmentConfig:
    """Procedural garment generation."""
    edge_length: float = 0.03
    jitter: float = 0.1
    min_vertices: int = 200
    max_vertices: int = 50_000

    def __post_init__(self):
        problems = []
        if self.edge_length <= 0:
            problems.append("edge_length must be > 0")
        if not 0 <= self.jitter < 0.5:
            problems.append("jitter must be in [0, 0.5)")
        if self.min_vertices >= self.max_vertices:
            problems.append("min_vertices must be < max_vertices")
        _check(problems, "garment")


@dataclass
class SimConfig:
    """Position-based-dynamics solver and action primitives."""
    dt: float = 0.005
    iterations: int = 20
    gravity: float = -9.8
    density: float = 0.2
    stretch_stiffness: float = 1.0
    bend_stiffness: float = 0.3
    damping: float = 0.05
    ground_friction: float = 0.8
    collision_tolerance: float = 1e-4
    gripper_speed: float = 0.5
    lift_height: float = 0.1
    settle_speed: float = 1e-3
    settle_cap: int = 2000
    layer_offset: float = 0.001
    layer_move_threshold: float = 0.02
    fling_height: float = 0.8
    fling_speed: float = 1.0
    fling_swing: float = 0.3
    fling_stretch: float = 0.95
    workspace_radius: float = 0.35
    place_height: float = 0.02
    rack_friction: float = 1.0
    hang_clearance: float = 0.1
    hang_drop: float = 0.25
    tethers: bool = True

    def __post_init__(self):
        problems = []
        if not 0 < self.dt <= 0.02:
            problems.append("dt must be in (0, 0.02]")
        if self.iterations < 1:
            problems.append("iterations must be >= 1")
        for name in ("stretch_stiffness", "bend_stiffness", "damping",
                     "ground_friction", "rack_friction"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                problems.append(f"{name} must be in [0, 1]")
        if self.gripper_speed <= 0 or self.fling_speed <= 0:
            problems.append("gripper and fling speeds must be > 0")
        if self.settle_cap < 1:
            problems.append("settle_cap must be >= 1")
        if not 0 < self.fling_stretch <= 1:
            problems.append("fling_stretch must be in (0, 1]")
        _check(problems, "sim")


@dataclass
class RenderConfig:
    """Top-down partial point cloud rendering."""
    points: int = 2048
    camera_height: float = 2.0
    resolution: int = 256
    focal: float = 320.0
    depth_tolerance: float = 0.002
    visibility_window: int = 1

    def __post_init__(self):
        problems = []
        if self.points < 64:
            problems.append("points must be >= 64")
        if self.focal <= 0:
            problems.append("focal must be > 0")
        if self.resolution < 16:
            problems.append("resolution must be >= 16")
        if self.visibility_window < 0:
            problems.append("visibility_window must be >= 0")
        _check(problems, "render")


@dataclass
class DescriptorConfig:
    """Hierarchical point encoder producing unit-norm per-point descriptors."""
    feature_dim: int = 64
    encoder_width: int = 32
    stage_widths: Tuple[int, int] = (64, 128)
    head_width: int = 128
    neighbors: int = 16
    activation: str = "gelu"

    def __post_init__(self):
        self.stage_widths = tuple(self.stage_widths)
        problems = []
        if self.feature_dim < 1:
            problems.append("feature_dim must be >= 1")
        if len(self.stage_widths) != 2:
            problems.append("stage_widths must have two entries")
        if self.neighbors < 1:
            problems.append("neighbors must be >= 1")
        if self.activation not in ("gelu", "relu", "tanh"):
            problems.append("activation must be gelu, relu or tanh")
        _check(problems, "descriptor")


@dataclass
class SkeletonConfig:
    """Skeleton learner (ordered keypoints + edge activations)."""
    keypoints: int = 50
    points: int = 256
    edge_samples: int = 16
    steps: int = 300
    learning_rate: float = 1e-2
    coverage_weight: float = 1.0
    existence_weight: float = 1.0
    spread_weight: float = 0.1
    anchor_weight: float = 1.0
    spread_sigma: float = 0.05
    source: str = "analytic"
    encoder: DescriptorConfig = field(default_factory=lambda: DescriptorConfig(
        feature_dim=16, encoder_width=32, stage_widths=(32, 64), head_width=64))

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = DescriptorConfig(**self.encoder)
        problems = []
        if not 2 <= self.keypoints <= 50:
            problems.append("keypoints must be in [2, 50]")
        if self.edge_samples < 2:
            problems.append("edge_samples must be >= 2")
        if self.source not in ("analytic", "learned"):
            problems.append("source must be analytic or learned")
        _check(problems, "skeleton")


@dataclass
class TrainConfig:
    """Correspondence training, refinement and few-shot adaptation."""
    temperature: float = 0.07
    negatives: int = 150
    positives_per_pair: int = 20
    pairs_per_batch: int = 8
    total_batches: int = 300
    learning_rate: float = 1e-3
    optimizer: str = "rmsprop"
    alpha: float = 0.8
    beta: Optional[float] = None
    beta_fraction: float = 0.1
    seed: int = 0
    refine_batches: int = 100
    c2f_probes_per_batch: int = 16
    cross_object_fraction: float = 0.5
    keypoint_anchor_fraction: float = 0.5
    use_cross_deformation: bool = True
    use_cross_object: bool = True
    include_positive: bool = True
    adapt_steps: int = 30
    adapt_learning_rate: float = 1e-4
    adapt_demonstrations: int = 5
    max_resample: int = 20
    workers: int = 1

    def __post_init__(self):
        problems = []
        if self.temperature <= 0:
            problems.append("temperature (tau) must be > 0")
        if self.negatives < 1:
            problems.append("negatives (m) must be >= 1")
        if not -1 < self.alpha <= 1:
            problems.append("alpha must be in (-1, 1]")
        if self.beta is not None and self.beta <= 0:
            problems.append("beta must be > 0")
        if self.beta_fraction <= 0:
            problems.append("beta_fraction must be > 0")
        if self.optimizer not in ("rmsprop", "adam", "sgd"):
            problems.append("optimizer must be rmsprop, adam or sgd")
        if self.positives_per_pair < 1 or self.pairs_per_batch < 1:
            problems.append("positives_per_pair and pairs_per_batch must be >= 1")
        if not 0 <= self.cross_object_fraction <= 1:
            problems.append("cross_object_fraction must be in [0, 1]")
        if not (self.use_cross_deformation or self.use_cross_object):
            problems.append("at least one of use_cross_deformation/use_cross_object")
        if not 1 <= self.adapt_demonstrations <= 5:
            problems.append("adapt_demonstrations must be in [1, 5]")
        if self.workers < 1:
            problems.append("workers must be >= 1")
        _check(problems, "train")


@dataclass
class TaskConfig:
    """Task bench thresholds, rack geometry and evaluation defaults."""
    coverage_bar: float = 0.8
    iou_bar: float = 0.7
    max_flings: int = 3
    raster_resolution: float = 0.002
    rack_start: Tuple[float, float, float] = (-0.4, 0.5, 0.9)
    rack_end: Tuple[float, float, float] = (0.4, 0.5, 0.9)
    rack_radius: float = 0.015
    place_floor: float = 0.005
    direct_place_match: bool = False
    init_actions: int = 3
    drop_height: float = 0.6
    workers: int = 1

    def __post_init__(self):
        self.rack_start = tuple(self.rack_start)
        self.rack_end = tuple(self.rack_end)
        problems = []
        if not 0 < self.coverage_bar <= 1 or not 0 < self.iou_bar <= 1:
            problems.append("coverage_bar and iou_bar must be in (0, 1]")
        if self.max_flings < 0:
            problems.append("max_flings must be >= 0")
        if self.raster_resolution <= 0:
            problems.append("raster_resolution must be > 0")
        _check(problems, "task")


@dataclass
class AppConfig:
    """All configuration sections."""
    garment: GarmentConfig = field(default_factory=GarmentConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    descriptor: DescriptorConfig = field(default_factory=DescriptorConfig)
    skeleton: SkeletonConfig = field(default_factory=SkeletonConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    task: TaskConfig = field(default_factory=TaskConfig)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


_SECTIONS = {
    "garment": GarmentConfig,
    "sim": SimConfig,
    "render": RenderConfig,
    "descriptor": DescriptorConfig,
    "skeleton": SkeletonConfig,
    "train": TrainConfig,
    "task": TaskConfig,
}


# =============================================================================
# LOADING
# =============================================================================

def load_defaults() -> Dict[str, Any]:
    """Read the bundled defaults.json (presets and garment ranges)."""
    with open(DEFAULTS_PATH) as f:
        return json.load(f)


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _env_overrides() -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    seed = os.getenv("CORRGARMENT_SEED")
    if seed is not None:
        overrides.setdefault("train", {})["seed"] = int(seed)
    workers = os.getenv("CORRGARMENT_WORKERS")
    if workers is not None:
        overrides.setdefault("train", {})["workers"] = int(workers)
        overrides.setdefault("task", {})["workers"] = int(workers)
    return overrides


def build_config(values: Dict[str, Any]) -> AppConfig:
    """Build an AppConfig from a nested dict of section overrides."""
    unknown = sorted(set(values) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"Unknown config sections: {', '.join(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        section_values = dict(values.get(name, {}))
        known = {f.name for f in fields(cls)}
        extra = sorted(set(section_values) - known)
        if extra:
            raise ConfigError(f"Unknown keys in [{name}]: {', '.join(extra)}")
        sections[name] = cls(**section_values)
    return AppConfig(**sections)


def load_config(path: Optional[str] = None, preset: Optional[str] = None) -> AppConfig:
    """Load configuration.

    Args:
        path: Optional user JSON file with section overrides
        preset: Preset name in defaults.json (default: CORRGARMENT_PRESET or "desk")

    Returns:
        Validated AppConfig

    Raises:
        ConfigError: If the preset is unknown or any value is invalid
    """
    preset = preset or os.getenv("CORRGARMENT_PRESET", "desk")
    presets = load_defaults().get("presets", {})
    if preset not in presets:
        raise ConfigError(f"Unknown preset '{preset}' (available: {', '.join(sorted(presets))})")

    values = copy.deepcopy(presets[preset])
    if path:
        with open(path) as f:
            values = _merge(values, json.load(f))
    values = _merge(values, _env_overrides())
    return build_config(values)


def garment_ranges(category: str) -> Dict[str, Tuple[float, float]]:
    """Size ranges (meters) used to sample garments of a category."""
    ranges = load_defaults().get("garment_ranges", {})
    if category not in ranges:
        raise ConfigError(f"No size ranges for category '{category}'")
    return {k: tuple(v) for k, v in ranges[category].items()}


def config_hash(section: Any) -> str:
    """Stable SHA-256 of a config section (dataclass or dict)."""
    data = dataclasses.asdict(section) if dataclasses.is_dataclass(section) else section
    payload = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()
