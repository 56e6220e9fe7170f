"""Correspondence training and coarse-to-fine refinement.

Batches are sampled from a per-batch generator seeded with (seed, batch
index), so batch contents do not depend on worker count or on what ran
before. Coarse-to-fine probes draw from their own (seed, batch index, 1)
stream.
"""

from __future__ import annotations

import copy
import csv
import math
from collections import deque
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, Iterator, List, Optional, TypeVar

import numpy as np
import torch

from core.config import DescriptorConfig, TrainConfig
from core.errors import CounterpartInvisible, DivergenceError, NonFiniteActivation
from core.log import get_logger
from core.storage import write_json
from modules.descriptor.field import DescriptorField, forward
from modules.descriptor.network import PointEncoder, build_model
from modules.training.dataset import CorrDataset
from modules.training.losses import info_nce
from modules.training.sampling import (
    CorrPairBatch,
    ObsRef,
    PairKind,
    failure_threshold,
    failures_from_fields,
    observation,
    sample_batch,
)

logger = get_logger("training")

LOSS_COLUMNS = ["batch", "L_CD", "L_CO", "L_C2F"]

T = TypeVar("T")
R = TypeVar("R")


def make_optimizer(params: Iterable[torch.nn.Parameter], kind: str, lr: float) -> torch.optim.Optimizer:
    if kind == "rmsprop":
        return torch.optim.RMSprop(params, lr=lr, momentum=0.0)
    if kind == "adam":
        return torch.optim.Adam(params, lr=lr)
    if kind == "sgd":
        return torch.optim.SGD(params, lr=lr)
    raise ValueError(f"Unknown optimizer '{kind}'")


def bounded_map(pool: Executor, fn: Callable[[T], R], items: Iterable[T], window: int) -> Iterator[R]:
    """Ordered ``pool.map`` that keeps at most ``window`` calls in flight."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    pending: deque = deque()
    for item in items:
        if len(pending) == window:
            yield pending.popleft().result()
        pending.append(pool.submit(fn, item))
    while pending:
        yield pending.popleft().result()


def batch_rng(seed: int, index: int, stream: Optional[int] = None) -> np.random.Generator:
    key = [seed, index] if stream is None else [seed, index, stream]
    return np.random.default_rng(key)


@dataclass
class Probe:
    """A mined coarse-to-fine item: probe in a, counterpart and failures in b."""
    ref_a: ObsRef
    ref_b: ObsRef
    probe: int
    positive: int
    failures: np.ndarray
    weights: np.ndarray


@dataclass
class BatchLosses:
    cd: Optional[torch.Tensor] = None
    co: Optional[torch.Tensor] = None
    c2f: Optional[torch.Tensor] = None

    def total(self) -> torch.Tensor:
        present = [t for t in (self.cd, self.co, self.c2f) if t is not None]
        if not present:
            raise ValueError("batch produced no loss terms")
        out = present[0]
        for t in present[1:]:
            out = out + t
        return out

    def row(self, index: int) -> Dict[str, str]:
        def fmt(t):
            return "" if t is None else repr(float(t))
        return {"batch": str(index), "L_CD": fmt(self.cd), "L_CO": fmt(self.co), "L_C2F": fmt(self.c2f)}


class LossLog:
    """CSV loss curve (batch, L_CD, L_CO, L_C2F); empty cells for absent terms."""

    def __init__(self, path: Optional[str]):
        self.path = Path(path) if path else None
        self.rows: List[Dict[str, str]] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as f:
                csv.DictWriter(f, fieldnames=LOSS_COLUMNS).writeheader()

    def append(self, row: Dict[str, str]) -> None:
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as f:
                csv.DictWriter(f, fieldnames=LOSS_COLUMNS).writerow(row)

    def dump_path(self) -> Optional[str]:
        return str(self.path.with_suffix(".divergence.json")) if self.path is not None else None


@dataclass
class CorrespondenceTrainer:
    """Runs optimisation batches on one descriptor model.

    Attributes:
        model: Model being trained (updated in place)
        dataset: Training garments and observations
        config: Training parameters
        log: Loss curve writer
        history: Total loss per executed batch
    """
    model: PointEncoder
    dataset: CorrDataset
    config: TrainConfig
    log: LossLog = field(default_factory=lambda: LossLog(None))
    history: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.optimizer = make_optimizer(self.model.parameters(), self.config.optimizer,
                                        self.config.learning_rate)

    # -------------------------------------------------------------------------
    # loss assembly
    # -------------------------------------------------------------------------

    def _fields(self, refs: Iterable[ObsRef], grad: bool) -> Dict[ObsRef, DescriptorField]:
        return {ref: forward(self.model, observation(self.dataset, ref), grad=grad)
                for ref in sorted(set(refs))}

    def offline_losses(self, batch: CorrPairBatch, fields: Dict[ObsRef, DescriptorField]) -> BatchLosses:
        tau = self.config.temperature
        per_kind: Dict[PairKind, List[torch.Tensor]] = {PairKind.CROSS_DEFORM: [], PairKind.CROSS_OBJECT: []}
        for pair in batch.pairs:
            fa = fields[pair.ref_a].features
            fb = fields[pair.ref_b].features
            items = info_nce(fa[torch.as_tensor(pair.anchors)], fb[torch.as_tensor(pair.positives)],
                             fb[torch.as_tensor(pair.negatives)], tau,
                             include_positive=self.config.include_positive)
            per_kind[pair.kind].append(items)
        out = BatchLosses()
        if per_kind[PairKind.CROSS_DEFORM]:
            out.cd = torch.cat(per_kind[PairKind.CROSS_DEFORM]).mean()
        if per_kind[PairKind.CROSS_OBJECT]:
            out.co = torch.cat(per_kind[PairKind.CROSS_OBJECT]).mean()
        return out

    def mine_probes(self, rng: np.random.Generator) -> List[Probe]:
        """Probe pairs of deformations and collect their failure sets under the current model."""
        usable = self.dataset.deformable()
        probes: List[Probe] = []
        cache: Dict[ObsRef, DescriptorField] = {}
        for _ in range(self.config.c2f_probes_per_batch):
            for _ in range(self.config.max_resample):
                g = usable[int(rng.integers(len(usable)))]
                record = self.dataset.records[g]
                a, b = rng.choice(len(record.observations), size=2, replace=False)
                ref_a, ref_b = (g, int(a)), (g, int(b))
                probe = int(rng.integers(len(record.observations[int(a)])))
                for ref in (ref_a, ref_b):
                    if ref not in cache:
                        cache[ref] = forward(self.model, observation(self.dataset, ref))
                try:
                    found = failures_from_fields(cache[ref_a], cache[ref_b], record, probe,
                                                 self.config.alpha, failure_threshold(record, self.config))
                except CounterpartInvisible:
                    continue
                if found:
                    idx = np.array([j for j, _ in found], dtype=np.int64)
                    dist = np.array([d for _, d in found]) / record.mesh.bbox_diagonal
                    positive = cache[ref_b].obs.first_index[int(cache[ref_a].obs.trace[probe])]
                    probes.append(Probe(ref_a, ref_b, probe, positive, idx, dist))
                break
        return probes

    def c2f_loss(self, probes: List[Probe], fields: Dict[ObsRef, DescriptorField]) -> Optional[torch.Tensor]:
        if not probes:
            return None
        tau = self.config.temperature
        items = []
        for p in probes:
            fa = fields[p.ref_a].features
            fb = fields[p.ref_b].features
            items.append(info_nce(fa[p.probe][None], fb[p.positive][None], fb[torch.as_tensor(p.failures)][None],
                                  tau, weights=torch.as_tensor(p.weights)[None],
                                  include_positive=self.config.include_positive))
        return torch.cat(items).mean()

    # -------------------------------------------------------------------------
    # optimisation
    # -------------------------------------------------------------------------

    def _diverged(self, index: int, batch: CorrPairBatch, message: str, losses: Optional[BatchLosses] = None):
        path = self.log.dump_path()
        if path is not None:
            write_json(path, {"batch": index, "message": message, "pairs": batch.describe(),
                              "losses": losses.row(index) if losses is not None else None})
        return DivergenceError(f"Batch {index}: {message}", dump_path=path)

    def run_batch(self, index: int, batch: CorrPairBatch, mine: bool = False) -> BatchLosses:
        probes = self.mine_probes(batch_rng(self.config.seed, index, 1)) if mine else []
        refs = [p.ref_a for p in batch.pairs] + [p.ref_b for p in batch.pairs]
        refs += [p.ref_a for p in probes] + [p.ref_b for p in probes]
        self.optimizer.zero_grad()
        try:
            fields = self._fields(refs, grad=True)
            losses = self.offline_losses(batch, fields)
            losses.c2f = self.c2f_loss(probes, fields)
            total = losses.total()
        except NonFiniteActivation as e:
            raise self._diverged(index, batch, str(e)) from e
        if not torch.isfinite(total):
            raise self._diverged(index, batch, "non-finite loss", losses)
        total.backward()
        self.optimizer.step()
        self.history.append(float(total))
        self.log.append(losses.row(index))
        return losses

    def run(self, start: int, count: int, mine: bool = False,
            on_batch: Optional[Callable[[int, BatchLosses], None]] = None) -> PointEncoder:
        self.dataset.validate()

        def make(index: int) -> CorrPairBatch:
            return sample_batch(self.dataset, self.config, batch_rng(self.config.seed, index))

        indices = range(start, start + count)
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            for index, batch in zip(indices, bounded_map(pool, make, indices, 2 * self.config.workers)):
                losses = self.run_batch(index, batch, mine=mine)
                if on_batch is not None:
                    on_batch(index, losses)
                if index % 50 == 0:
                    logger.debug("batch %d %s", index, losses.row(index))
        return self.model


def uniform_baseline(negatives: int) -> float:
    """Loss of a constant-feature model: ln(m + 1)."""
    return math.log(negatives + 1)


def train_correspondence(
    dataset: CorrDataset,
    config: Optional[TrainConfig] = None,
    descriptor: Optional[DescriptorConfig] = None,
    model: Optional[PointEncoder] = None,
    start: int = 0,
    batches: Optional[int] = None,
    log_path: Optional[str] = None,
    on_batch: Optional[Callable[[int, BatchLosses], None]] = None,
) -> PointEncoder:
    """Optimise mean cross-deformation plus cross-object loss.

    Args:
        dataset: Garments with >= 2 observations each
        config: Training parameters (seed, batch sizes, optimizer, ...)
        descriptor: Architecture for a fresh model
        model: Continue from this model instead (a copy is trained)
        start: Index of the first batch (continuation)
        batches: Number of batches (default config.total_batches)
        log_path: CSV loss curve
        on_batch: Callback(index, losses)

    Raises:
        DatasetError: Dataset too small
        DivergenceError: Non-finite loss; the batch is dumped next to the log
    """
    config = config or TrainConfig()
    model = copy.deepcopy(model) if model is not None else build_model(descriptor, config.seed)
    trainer = CorrespondenceTrainer(model, dataset, config, LossLog(log_path))
    count = config.total_batches if batches is None else batches
    logger.info("Training %d batches from %d (seed %d)", count, start, config.seed)
    return trainer.run(start, count, on_batch=on_batch)


def refine_c2f(
    model: PointEncoder,
    dataset: CorrDataset,
    config: Optional[TrainConfig] = None,
    start: Optional[int] = None,
    batches: Optional[int] = None,
    log_path: Optional[str] = None,
    on_batch: Optional[Callable[[int, BatchLosses], None]] = None,
) -> PointEncoder:
    """Joint offline and coarse-to-fine optimisation, continuing the batch sequence.

    Batch indices continue after ``config.total_batches`` by default, so with
    nothing mined (alpha = 1) this equals continued offline training.
    """
    config = config or TrainConfig()
    start = config.total_batches if start is None else start
    count = config.refine_batches if batches is None else batches
    trainer = CorrespondenceTrainer(copy.deepcopy(model), dataset, config, LossLog(log_path))
    logger.info("Refining %d batches from %d (alpha %.2f)", count, start, config.alpha)
    return trainer.run(start, count, mine=True, on_batch=on_batch)
