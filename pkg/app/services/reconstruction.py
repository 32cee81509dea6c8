"""
Coarse reconstruction of occluded frames: the Conv-LSTM stack for tracks,
the autoencoder for isolated frames.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import DatasetError, DimensionError
from app.core.rng import RngStreams
from app.engine.losses import bce_loss
from app.engine.optim import Adam
from app.engine.tensor import DEFAULT_DTYPE, Tensor, no_grad
from app.models.config import PipelineConfig
from app.models.data import ReconstructionSample, RefinePair
from app.networks import autoencoder as autoencoder_net
from app.networks import convlstm as convlstm_net
from app.networks.autoencoder import AutoencoderModel
from app.networks.convlstm import ConvLstmStack, table_schedule
from app.networks.layers import Module, check_frame_size
from app.services.training import TrainingSession, load_model_state, stack, supervised_epoch, train_until

logger = logging.getLogger(__name__)

CONVLSTM_KIND = convlstm_net.MODEL_KIND
AUTOENCODER_KIND = autoencoder_net.MODEL_KIND

FramePair = Tuple[np.ndarray, np.ndarray]


def pad_sequence(frames: Sequence[np.ndarray], length: int) -> List[np.ndarray]:
    """Repeat the earliest frame until `length` frames are available."""
    if len(frames) < 1:
        raise DatasetError("Conv-LSTM reconstruction needs at least one frame")
    if len(frames) > length:
        raise DimensionError("conv_lstm_reconstruct", "sequence", length, len(frames))
    if len(frames) < length:
        logger.warning("Only %d of %d frames available; repeating the earliest frame", len(frames), length)
    return [frames[0]] * (length - len(frames)) + list(frames)


def conv_lstm_reconstruct(model: ConvLstmStack, frames: Sequence[np.ndarray], length: int = 3) -> np.ndarray:
    """frames n-2, n-1 and the occluded frame n (oldest first) -> reconstructed frame n."""
    dtype = model.param_dtype()
    steps = [Tensor(f[None].astype(dtype), dtype=dtype) for f in pad_sequence(frames, length)]
    for x in steps:
        check_frame_size("conv_lstm_reconstruct", x, model.frame_size)
    with no_grad():
        return model(steps).data[0]


def autoencoder_reconstruct(model: AutoencoderModel, frame: np.ndarray) -> np.ndarray:
    dtype = model.param_dtype()
    with no_grad():
        return model(Tensor(frame[None].astype(dtype), dtype=dtype)).data[0]


def convlstm_architecture(config: PipelineConfig) -> Dict[str, Any]:
    section = config.convlstm
    return {
        "frame_size": config.run.frame_size,
        "widths": list(section.widths),
        "kernels": list(section.kernels),
        "sequence_length": section.sequence_length,
    }


def autoencoder_architecture(config: PipelineConfig) -> Dict[str, Any]:
    return {"frame_size": config.run.frame_size, "widths": list(config.autoencoder.widths)}


def build_convlstm(architecture: Dict[str, Any], rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> ConvLstmStack:
    schedule = table_schedule(architecture["widths"], architecture["kernels"])
    return ConvLstmStack(schedule, architecture["frame_size"], rng, dtype=dtype)


def build_autoencoder(architecture: Dict[str, Any], rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> AutoencoderModel:
    return AutoencoderModel(architecture["widths"], architecture["frame_size"], rng, dtype=dtype)


def new_session(kind: str, model: Module, architecture: Dict[str, Any], streams: RngStreams,
                learning_rate: float) -> TrainingSession:
    return TrainingSession(
        kind=kind,
        model=model,
        optimizers={"adam": Adam(model.named_parameters(), learning_rate=learning_rate)},
        rng=streams.stream(f"train/{kind}/shuffle"),
        architecture=architecture,
    )


def train_conv_lstm(session: TrainingSession, samples: Sequence[ReconstructionSample], epochs: int,
                    batch_size: int, log_every: int = 10) -> List[float]:
    """Pixel-wise BCE between the reconstructed frame n and the clean frame n."""
    if not samples:
        raise DatasetError("Conv-LSTM training needs at least one sample")
    model: ConvLstmStack = session.model
    dtype = model.param_dtype()
    length = len(samples[0].context) + 1
    if any(len(s.context) + 1 != length for s in samples):
        raise DatasetError("all reconstruction samples must share one context length")
    timesteps = [[s.context[t] if t < length - 1 else s.occluded for s in samples] for t in range(length)]
    targets = np.stack([s.clean for s in samples]).astype(np.float64)

    def loss_fn(index: np.ndarray) -> Tensor:
        inputs = [stack(step, index, dtype) for step in timesteps]
        return bce_loss(model(inputs), targets[index])

    trace = train_until(session, epochs, lambda s: supervised_epoch(s, len(samples), batch_size, loss_fn), log_every)
    return [row["loss"] for row in trace]


def train_autoencoder(session: TrainingSession, pairs: Sequence[FramePair], epochs: int, batch_size: int,
                      log_every: int = 10) -> List[float]:
    """Pixel-wise BCE between autoencoder(occluded) and clean."""
    if not pairs:
        raise DatasetError("autoencoder training needs at least one (occluded, clean) pair")
    model: AutoencoderModel = session.model
    dtype = model.param_dtype()
    inputs = [p[0] for p in pairs]
    targets = np.stack([p[1] for p in pairs]).astype(np.float64)

    def loss_fn(index: np.ndarray) -> Tensor:
        return bce_loss(model(stack(inputs, index, dtype)), targets[index])

    trace = train_until(session, epochs, lambda s: supervised_epoch(s, len(pairs), batch_size, loss_fn), log_every)
    return [row["loss"] for row in trace]


def coarse_refine_pairs(model: Module, samples: Sequence[ReconstructionSample],
                        sequential: bool) -> List[RefinePair]:
    """(coarse reconstruction, clean frame) pairs that condition the cGAN."""
    pairs = []
    for sample in samples:
        if sequential:
            coarse = conv_lstm_reconstruct(model, [*sample.context, sample.occluded], len(sample.context) + 1)
        else:
            coarse = autoencoder_reconstruct(model, sample.occluded)
        pairs.append(RefinePair(coarse=coarse, target=sample.clean))
    return pairs


class ReconstructionService:
    """Builds, trains and loads the two coarse reconstructors from a PipelineConfig."""

    def __init__(self, config: PipelineConfig, streams: Optional[RngStreams] = None):
        self.config = config
        self.streams = streams or RngStreams(config.run.seed)

    def convlstm_session(self) -> TrainingSession:
        architecture = convlstm_architecture(self.config)
        model = build_convlstm(architecture, self.streams.stream(f"init/{CONVLSTM_KIND}"))
        return new_session(CONVLSTM_KIND, model, architecture, self.streams, self.config.convlstm.learning_rate)

    def autoencoder_session(self) -> TrainingSession:
        architecture = autoencoder_architecture(self.config)
        model = build_autoencoder(architecture, self.streams.stream(f"init/{AUTOENCODER_KIND}"))
        return new_session(AUTOENCODER_KIND, model, architecture, self.streams, self.config.autoencoder.learning_rate)

    def train_convlstm(self, samples: Sequence[ReconstructionSample],
                       resume: Optional[Path] = None) -> Tuple[TrainingSession, List[float]]:
        session = self.convlstm_session()
        if resume is not None:
            session.restore(load_model_state(resume, CONVLSTM_KIND))
        section = self.config.convlstm
        losses = train_conv_lstm(session, samples, section.epochs, section.batch_size, self.config.run.log_every)
        return session, losses

    def train_autoencoder(self, pairs: Sequence[FramePair],
                          resume: Optional[Path] = None) -> Tuple[TrainingSession, List[float]]:
        session = self.autoencoder_session()
        if resume is not None:
            session.restore(load_model_state(resume, AUTOENCODER_KIND))
        section = self.config.autoencoder
        losses = train_autoencoder(session, pairs, section.epochs, section.batch_size, self.config.run.log_every)
        return session, losses

    @staticmethod
    def load_convlstm(path: Union[str, Path]) -> Tuple[ConvLstmStack, int]:
        checkpoint = load_model_state(path, CONVLSTM_KIND)
        architecture = checkpoint.extra["architecture"]
        model = build_convlstm(architecture, np.random.default_rng(0))
        model.load_state_dict(checkpoint.parameters)
        return model, int(architecture["sequence_length"])

    @staticmethod
    def load_autoencoder(path: Union[str, Path]) -> AutoencoderModel:
        checkpoint = load_model_state(path, AUTOENCODER_KIND)
        model = build_autoencoder(checkpoint.extra["architecture"], np.random.default_rng(0))
        model.load_state_dict(checkpoint.parameters)
        return model
