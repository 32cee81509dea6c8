"""
Shared training machinery: the resumable session state, the epoch loop and
the conversion between a session and its checkpoint.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Union

import numpy as np

from app.core.errors import CheckpointFormatError, MissingCheckpointError
from app.core.metrics import EPOCH_DURATION, EPOCH_LOSS, TRAINING_EPOCHS
from app.core.rng import generator_state, restore_generator
from app.engine.optim import Adam
from app.engine.tensor import Tensor
from app.networks.layers import Module
from app.storage.checkpoint import ModelCheckpoint, load_checkpoint, merge_tables, save_checkpoint, split_table

logger = logging.getLogger(__name__)

EpochLosses = Dict[str, float]


@dataclass
class TrainingSession:
    """
    Everything needed to continue training bit-exactly: parameters (in the
    model), optimizer moments, the shuffle generator, the epoch counter and
    the loss trace so far.
    """
    kind: str
    model: Module
    optimizers: Dict[str, Adam]
    rng: np.random.Generator
    architecture: Dict[str, Any]
    epoch: int = 0
    trace: List[EpochLosses] = field(default_factory=list)

    def to_checkpoint(self) -> ModelCheckpoint:
        tensors, scalars = {}, {}
        for name, optimizer in self.optimizers.items():
            tensors[name], scalars[name] = optimizer.state_tables()
        return ModelCheckpoint(
            kind=self.kind,
            epoch=self.epoch,
            parameters=self.model.state_dict(),
            optimizer=merge_tables((f"{name}/", table) for name, table in tensors.items()),
            extra={
                "architecture": self.architecture,
                "optimizer": scalars,
                "rng": generator_state(self.rng),
                "trace": self.trace,
            },
        )

    def save(self, path: Union[str, Path]) -> str:
        digest = save_checkpoint(self.to_checkpoint(), path)
        logger.info("Saved %s checkpoint at epoch %d to %s", self.kind, self.epoch, path)
        return digest

    def restore(self, checkpoint: ModelCheckpoint) -> "TrainingSession":
        """Load parameters, optimizer state, RNG state and trace from a checkpoint of the same kind."""
        self.model.load_state_dict(checkpoint.parameters)
        for name, optimizer in self.optimizers.items():
            optimizer.load_state_tables(split_table(checkpoint.optimizer, f"{name}/"), checkpoint.extra["optimizer"][name])
        self.rng = restore_generator(checkpoint.extra["rng"])
        self.epoch = checkpoint.epoch
        self.trace = [dict(row) for row in checkpoint.extra.get("trace", [])]
        return self


def load_model_state(path: Union[str, Path], kind: str) -> ModelCheckpoint:
    if not Path(path).is_file():
        raise MissingCheckpointError(f"{kind} checkpoint not found: {path}")
    checkpoint = load_checkpoint(path, expected_kind=kind)
    if not isinstance(checkpoint.extra.get("architecture"), dict):
        raise CheckpointFormatError(f"{path}: {kind} checkpoint carries no architecture settings")
    logger.info("Loaded %s checkpoint %s (epoch %d)", kind, path, checkpoint.epoch)
    return checkpoint


def minibatches(count: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]


def stack(arrays, index: np.ndarray, dtype) -> Tensor:
    return Tensor(np.stack([arrays[int(i)] for i in index]).astype(dtype), dtype=dtype)


def supervised_epoch(session: TrainingSession, count: int, batch_size: int,
                     loss_fn: Callable[[np.ndarray], Tensor]) -> EpochLosses:
    """One pass of shuffled mini-batches; returns the sample-weighted mean loss."""
    optimizer = session.optimizers["adam"]
    total = 0.0
    for index in minibatches(count, batch_size, session.rng):
        optimizer.zero_grad()
        loss = loss_fn(index)
        loss.backward()
        optimizer.step()
        total += loss.item() * len(index)
    return {"loss": total / count}


def train_until(session: TrainingSession, total_epochs: int, epoch_fn: Callable[[TrainingSession], EpochLosses],
                log_every: int = 10, primary: str = "loss") -> List[EpochLosses]:
    """Run epochs until session.epoch reaches total_epochs; a resumed session continues where it stopped."""
    if session.epoch >= total_epochs:
        logger.info("%s already trained for %d epochs, nothing to do", session.kind, session.epoch)
        return session.trace
    logger.info("Training %s from epoch %d to %d", session.kind, session.epoch, total_epochs)
    while session.epoch < total_epochs:
        started = time.perf_counter()
        losses = epoch_fn(session)
        session.trace.append(losses)
        session.epoch += 1
        TRAINING_EPOCHS.labels(model=session.kind).inc()
        EPOCH_LOSS.labels(model=session.kind).set(losses[primary])
        EPOCH_DURATION.labels(model=session.kind).observe(time.perf_counter() - started)
        if session.epoch % log_every == 0 or session.epoch == total_epochs or session.epoch == 1:
            rendered = " ".join(f"{k}={v:.6f}" for k, v in losses.items())
            logger.info("%s epoch %d/%d %s", session.kind, session.epoch, total_epochs, rendered)
    return session.trace


def loss_series(trace: List[EpochLosses], key: str = "loss") -> List[float]:
    return [row[key] for row in trace]


def write_trace_csv(trace: List[EpochLosses], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(trace[0].keys()) if trace else ["loss"]
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", *columns])
        for epoch, row in enumerate(trace):
            writer.writerow([epoch, *(repr(float(row[c])) for c in columns)])
    return path


def warn_single_class(kind: str, labels) -> Optional[int]:
    classes = set(int(y) for y in labels)
    if len(classes) < 2:
        logger.warning("%s training set contains only class %s; training proceeds", kind, sorted(classes))
        return next(iter(classes), None)
    return None
