from __future__ import annotations

import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.rng import RngStreams
from app.engine.losses import bce_loss
from app.engine.optim import Adam
from app.engine.tensor import DEFAULT_DTYPE, Tensor, no_grad
from app.models.config import PipelineConfig
from app.models.data import LabeledFrame
from app.networks import detector as detector_net
from app.networks.detector import DetectorModel
from app.networks.layers import check_frame_size
from app.services.training import (
    TrainingSession,
    load_model_state,
    stack,
    supervised_epoch,
    train_until,
    warn_single_class,
)

logger = logging.getLogger(__name__)

MODEL_KIND = detector_net.MODEL_KIND


class Decision(str, Enum):
    OCCLUDED = "occluded"
    UNOCCLUDED = "unoccluded"


def _batch(frame: np.ndarray, dtype) -> Tensor:
    data = frame if frame.ndim == 4 else frame[None]
    return Tensor(data.astype(dtype), dtype=dtype)


def detect(model: DetectorModel, frame: np.ndarray) -> float:
    """p(occluded) for one (3, H, W) frame."""
    x = _batch(frame, model.param_dtype())
    check_frame_size("detect", x, model.frame_size)
    with no_grad():
        return float(model(x).data[0, 0])


def detect_batch(model: DetectorModel, frames: np.ndarray) -> np.ndarray:
    x = _batch(np.asarray(frames), model.param_dtype())
    check_frame_size("detect", x, model.frame_size)
    with no_grad():
        return model(x).data[:, 0].astype(np.float64)


def decide(probability: float, threshold: float) -> Decision:
    """Scores at exactly the threshold count as occluded."""
    return Decision.OCCLUDED if probability >= threshold else Decision.UNOCCLUDED


def classify(model: DetectorModel, frame: np.ndarray) -> Decision:
    return decide(detect(model, frame), model.threshold)


def detector_architecture(config: PipelineConfig) -> Dict[str, Any]:
    return {
        "frame_size": config.run.frame_size,
        "widths": list(config.detector.widths),
        "threshold": config.detector.threshold,
    }


def build_detector(architecture: Dict[str, Any], rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> DetectorModel:
    return DetectorModel(architecture["frame_size"], rng, widths=architecture["widths"],
                         threshold=architecture["threshold"], dtype=dtype)


def detector_session(model: DetectorModel, architecture: Dict[str, Any], streams: RngStreams,
                     learning_rate: float) -> TrainingSession:
    return TrainingSession(
        kind=MODEL_KIND,
        model=model,
        optimizers={"adam": Adam(model.named_parameters(), learning_rate=learning_rate)},
        rng=streams.stream(f"train/{MODEL_KIND}/shuffle"),
        architecture=architecture,
    )


def train_detector(session: TrainingSession, dataset: Sequence[LabeledFrame], epochs: int,
                   batch_size: int, log_every: int = 10) -> List[float]:
    """Minimise mean BCE between p(occluded) and the frame labels with Adam."""
    warn_single_class(MODEL_KIND, (s.label for s in dataset))
    model: DetectorModel = session.model
    dtype = model.param_dtype()
    frames = [s.frame for s in dataset]
    labels = np.array([s.label for s in dataset], dtype=np.float64)

    def loss_fn(index: np.ndarray) -> Tensor:
        x = stack(frames, index, dtype)
        return bce_loss(model(x), labels[index].reshape(-1, 1))

    trace = train_until(session, epochs, lambda s: supervised_epoch(s, len(dataset), batch_size, loss_fn), log_every)
    return [row["loss"] for row in trace]


def evaluate_detector(model: DetectorModel, dataset: Sequence[LabeledFrame]) -> Dict[str, Any]:
    """Accuracy, precision and recall of the occluded class, plus the 2x2 confusion matrix [truth][decision]."""
    scores = detect_batch(model, np.stack([s.frame for s in dataset])) if dataset else np.zeros(0)
    predicted = (scores >= model.threshold).astype(int)
    truth = np.array([s.label for s in dataset], dtype=int)
    confusion = [[int(np.sum((truth == t) & (predicted == p))) for p in (0, 1)] for t in (0, 1)]
    tp, fp, fn = confusion[1][1], confusion[0][1], confusion[1][0]
    total = len(dataset)
    return {
        "accuracy": float((predicted == truth).mean()) if total else 0.0,
        "precision": tp / (tp + fp) if tp + fp else 0.0,
        "recall": tp / (tp + fn) if tp + fn else 0.0,
        "confusion": confusion,
        "count": total,
    }


class DetectorService:
    """
    Config-driven construction, training and checkpointing of the occlusion detector.
    """

    def __init__(self, config: PipelineConfig, streams: Optional[RngStreams] = None):
        self.config = config
        self.streams = streams or RngStreams(config.run.seed)

    def new_session(self) -> TrainingSession:
        architecture = detector_architecture(self.config)
        model = build_detector(architecture, self.streams.stream(f"init/{MODEL_KIND}"))
        return detector_session(model, architecture, self.streams, self.config.detector.learning_rate)

    def train(self, dataset: Sequence[LabeledFrame], resume: Optional[Path] = None) -> Tuple[TrainingSession, List[float]]:
        session = self.new_session()
        if resume is not None:
            session.restore(load_model_state(resume, MODEL_KIND))
        section = self.config.detector
        losses = train_detector(session, dataset, section.epochs, section.batch_size, self.config.run.log_every)
        return session, losses

    @staticmethod
    def load(path: Union[str, Path]) -> DetectorModel:
        checkpoint = load_model_state(path, MODEL_KIND)
        model = build_detector(checkpoint.extra["architecture"], np.random.default_rng(0))
        model.load_state_dict(checkpoint.parameters)
        return model
