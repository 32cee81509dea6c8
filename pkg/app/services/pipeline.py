"""
Detection-gated reconstruction.

Every frame is scored by the occlusion detector. Frames classified
unoccluded are passed through untouched. Occluded frames go to the Conv-LSTM
(sequential mode, fed the raw input frames n-2, n-1, n) or the autoencoder
(non-sequential mode), then to the cGAN generator when one is loaded.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import MissingCheckpointError
from app.core.metrics import ROUTING_DECISIONS, STAGE_DURATION
from app.data.datasets import context_indices
from app.models.config import Mode
from app.models.data import RoutingEntry
from app.networks.autoencoder import AutoencoderModel
from app.networks.cgan import CganModel
from app.networks.convlstm import ConvLstmStack
from app.networks.detector import DetectorModel
from app.services.detector import Decision, decide, detect_batch
from app.services.reconstruction import autoencoder_reconstruct, conv_lstm_reconstruct
from app.services.refiner import refine

logger = logging.getLogger(__name__)


@dataclass
class PipelineModels:
    detector: DetectorModel
    convlstm: Optional[ConvLstmStack] = None
    autoencoder: Optional[AutoencoderModel] = None
    cgan: Optional[CganModel] = None
    sequence_length: int = 3

    def require(self, mode: Mode, refine_stage: bool = True) -> None:
        """Fail before any frame is processed if a stage the mode needs is missing."""
        if mode == Mode.SEQUENTIAL and self.convlstm is None:
            raise MissingCheckpointError("sequential mode needs a Conv-LSTM checkpoint")
        if mode == Mode.NON_SEQUENTIAL and self.autoencoder is None:
            raise MissingCheckpointError("non-sequential mode needs an autoencoder checkpoint")
        if refine_stage and self.cgan is None:
            raise MissingCheckpointError("refinement needs a cGAN checkpoint")


@dataclass
class RoutedFrames:
    outputs: List[np.ndarray]
    log: List[RoutingEntry]
    coarse: Dict[int, np.ndarray] = field(default_factory=dict)


def _timed(stage: str, fn, *args):
    started = time.perf_counter()
    result = fn(*args)
    STAGE_DURATION.labels(stage=stage).observe(time.perf_counter() - started)
    return result


def route_and_reconstruct(models: PipelineModels, frames: Sequence[np.ndarray], mode: Mode,
                          refine_stage: bool = True) -> RoutedFrames:
    """
    Process a track (sequential) or a list of independent frames
    (non-sequential). Returns the per-frame outputs, the routing log and the
    coarse reconstruction of every frame that was routed.
    """
    models.require(mode, refine_stage)
    frames = list(frames)
    if not frames:
        return RoutedFrames(outputs=[], log=[])
    scores = _timed("detector", detect_batch, models.detector, np.stack(frames))
    outputs: List[np.ndarray] = []
    log: List[RoutingEntry] = []
    coarse: Dict[int, np.ndarray] = {}
    for n, (frame, score) in enumerate(zip(frames, scores)):
        decision = decide(float(score), models.detector.threshold)
        ROUTING_DECISIONS.labels(mode=mode.value, decision=decision.value).inc()
        if decision == Decision.UNOCCLUDED:
            outputs.append(frame)
            log.append(RoutingEntry(frame_index=n, score=float(score), decision=decision.value, stages=["detector"]))
            continue
        if mode == Mode.SEQUENTIAL:
            indices = context_indices(n, models.sequence_length)
            recon = _timed("convlstm", conv_lstm_reconstruct, models.convlstm, [frames[i] for i in indices],
                           models.sequence_length)
            stages = ["detector", "convlstm"]
        else:
            indices = [n]
            recon = _timed("autoencoder", autoencoder_reconstruct, models.autoencoder, frame)
            stages = ["detector", "autoencoder"]
        coarse[n] = recon
        if refine_stage:
            recon = _timed("cgan", refine, models.cgan, recon)
            stages.append("cgan")
        outputs.append(recon)
        log.append(RoutingEntry(frame_index=n, score=float(score), decision=decision.value, stages=stages,
                                context=indices))
    routed = sum(1 for entry in log if entry.decision == Decision.OCCLUDED.value)
    logger.info("Routed %d of %d frames through reconstruction (%s mode)", routed, len(frames), mode.value)
    return RoutedFrames(outputs=outputs, log=log, coarse=coarse)


def write_routing_log(logs: Sequence[Tuple[str, Sequence[RoutingEntry]]], path: Union[str, Path]) -> Path:
    """One CSV row per frame: source, frame_index, score, decision, stages, context."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["source", "frame_index", "score", "decision", "stages", "context"])
        for source, log in logs:
            for entry in log:
                writer.writerow([source, entry.frame_index, repr(entry.score), entry.decision,
                                 ">".join(entry.stages), " ".join(str(i) for i in entry.context)])
    return path
