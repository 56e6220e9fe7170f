"""Batch task evaluation - run episodes and write CSV/JSON reports.

Provides:
- Episode runner for the fold, unfold and hang tasks
- Parallel episodes with order-stable aggregation
- CSV/JSON reports plus a wall-clock sidecar (reports stay byte-identical)
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from core.config import AppConfig
from core.log import get_logger
from modules.descriptor.network import PointEncoder
from modules.garment.generator import GarmentMesh
from modules.sim.primitives import INITIAL_KINDS, initial_state
from modules.sim.solver import Capsule
from modules.sim.state import build_constraints
from modules.tasks.demonstration import Demonstration, TaskKind
from modules.tasks.policies import POLICIES, EpisodeResult, run_fold, run_hang, run_unfold

logger = get_logger("workflows")

DEFAULT_INIT = {TaskKind.FOLD: "flat", TaskKind.UNFOLD: "rand", TaskKind.HANG: "flat"}

REPORT_FIELDS = [
    "episode", "task", "garment", "seed", "metric_name", "metric",
    "threshold", "success", "settled", "actions", "picks",
]


def episode_seed(seed: int, episode: int) -> int:
    return seed * 1000 + episode


@dataclass
class TaskReport:
    """All episodes of one evaluation run, ordered by episode id."""
    task: str
    policy: str
    init: str
    seed: int
    threshold: float
    results: List[EpisodeResult] = field(default_factory=list)

    @property
    def successes(self) -> int:
        return sum(1 for r in self.results if r.success)

    @property
    def success_rate(self) -> float:
        return self.successes / len(self.results) if self.results else 0.0

    @property
    def mean_metric(self) -> float:
        return sum(r.metric for r in self.results) / len(self.results) if self.results else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task": self.task,
            "policy": self.policy,
            "init": self.init,
            "seed": self.seed,
            "threshold": self.threshold,
            "episodes": len(self.results),
            "successes": self.successes,
            "success_rate": self.success_rate,
            "mean_metric": self.mean_metric,
            "results": [r.to_dict() for r in self.results],
        }


class TaskBench:
    """Evaluate one demonstration with one model over a set of garments."""

    def __init__(
        self,
        demo: Demonstration,
        model: PointEncoder,
        config: Optional[AppConfig] = None,
        rack: Optional[Capsule] = None,
    ):
        """Initialize the bench.

        Args:
            demo: Demonstration to transfer
            model: Descriptor model
            config: Full configuration (sim, render and task sections are used)
            rack: Hanging rack (default from the task config)
        """
        self.demo = demo
        self.model = model
        self.config = config or AppConfig()
        self.rack = rack

    def run_episode(self, episode: int, mesh: GarmentMesh, seed: int, init: str,
                    policy: str = "matched") -> EpisodeResult:
        """Build the initial state for ``mesh`` and run the demo's task once."""
        c = self.config
        constraints = build_constraints(mesh, c.sim)
        state = initial_state(mesh, constraints, init, seed, c.sim, c.task.init_actions,
                              c.task.drop_height, c.render)
        if self.demo.task == TaskKind.FOLD:
            return run_fold(self.demo, mesh, constraints, state, self.model, c, seed=seed,
                            episode=episode, policy=policy)
        if self.demo.task == TaskKind.UNFOLD:
            return run_unfold(self.demo, mesh, constraints, state, self.model, c, seed=seed, episode=episode)
        return run_hang(self.demo, mesh, constraints, state, self.model, c, rack=self.rack,
                        seed=seed, episode=episode)

    def run(
        self,
        garments: Sequence[GarmentMesh],
        episodes: int,
        seed: int = 0,
        init: Optional[str] = None,
        policy: str = "matched",
        on_progress: Optional[Callable[[int, int], None]] = None,
        timings: Optional[Dict[str, float]] = None,
    ) -> TaskReport:
        """Run ``episodes`` episodes, cycling through ``garments``.

        Args:
            garments: Evaluation garments
            episodes: Episode count
            seed: Base seed; episode i uses seed * 1000 + i
            init: Initial state kind (default depends on the task)
            policy: matched or random (fold only)
            on_progress: Callback(done, total)
            timings: If given, filled with wall-clock seconds per episode

        Returns:
            TaskReport ordered by episode id
        """
        if not garments:
            raise ValueError("Evaluation needs at least one garment")
        if policy not in POLICIES:
            raise ValueError(f"Unknown policy '{policy}' (choose from {', '.join(POLICIES)})")
        init = init or DEFAULT_INIT[self.demo.task]
        if init not in INITIAL_KINDS:
            raise ValueError(f"Unknown initial state '{init}' (choose from {', '.join(INITIAL_KINDS)})")

        def one(i: int) -> EpisodeResult:
            started = time.perf_counter()
            result = self.run_episode(i, garments[i % len(garments)], episode_seed(seed, i), init, policy)
            if timings is not None:
                timings[f"episode_{i}"] = time.perf_counter() - started
            return result

        results = []
        with ThreadPoolExecutor(max_workers=self.config.task.workers) as pool:
            for done, result in enumerate(pool.map(one, range(episodes)), start=1):
                results.append(result)
                if on_progress:
                    on_progress(done, episodes)

        threshold = {TaskKind.FOLD: self.config.task.iou_bar,
                     TaskKind.UNFOLD: self.config.task.coverage_bar,
                     TaskKind.HANG: 1.0}[self.demo.task]
        report = TaskReport(task=self.demo.task.value, policy=policy, init=init, seed=seed,
                            threshold=threshold, results=results)
        logger.info("%s: %d/%d successes, mean metric %.3f", report.task, report.successes,
                    len(results), report.mean_metric)
        return report


def save_report_json(report: TaskReport, path: str) -> str:
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
    return str(filepath)


def save_report_csv(report: TaskReport, path: str) -> str:
    """Save one row per episode.

    Args:
        report: The task report
        path: Output CSV path

    Returns:
        Path to saved file
    """
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        for result in report.results:
            writer.writerow(result.to_dict())
    return str(filepath)


def save_timings(timings: Dict[str, float], report_path: str) -> str:
    """Wall-clock sidecar ``<report>.timings.json``."""
    filepath = Path(report_path)
    filepath = filepath.with_name(filepath.stem + ".timings.json")
    with open(filepath, "w") as f:
        json.dump(dict(sorted(timings.items())), f, indent=2)
    return str(filepath)


def save_report(report: TaskReport, path: str) -> str:
    """CSV or JSON by extension."""
    if Path(path).suffix.lower() == ".json":
        return save_report_json(report, path)
    return save_report_csv(report, path)
