"""
Synthetic re-identification benchmark.

Identities get one gallery track (clean frames) and one or more probe tracks
carrying synthetic occluders. The Siamese model is scored on the same probe
and gallery split under four probe conditions per reconstruction mode:

    raw          probe frames as observed
    coarse       occluded frames replaced by the Conv-LSTM / autoencoder output
    coarse_cgan  coarse output refined by the cGAN
    clean        the ground-truth frames (upper bound)

Frame-level (every probe frame is a query) and track-level (every probe
track is a query) results are both reported, together with detector quality
and reconstruction PSNR.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from app.core.errors import DatasetError
from app.core.rng import RngStreams
from app.data.datasets import labeled_frames, reconstruction_samples
from app.data.sampling import sample_frame_pairs
from app.data.synthetic import build_synthetic_tracks
from app.models.config import Mode, PipelineConfig
from app.models.data import FrameSequence, LabeledFrame, RankingResult
from app.networks.autoencoder import AutoencoderModel
from app.networks.cgan import CganModel
from app.networks.convlstm import ConvLstmStack
from app.networks.detector import DetectorModel
from app.networks.siamese import SiameseModel
from app.services.detector import DetectorService, evaluate_detector
from app.services.metrics import evaluate_rankings, masked_psnr, mean_psnr, metric_rows, psnr
from app.services.pipeline import PipelineModels, route_and_reconstruct
from app.services.reconstruction import ReconstructionService, coarse_refine_pairs
from app.services.refiner import RefinerService
from app.services.reid import ReidService, embed_batch, rank_gallery, rank_track
from app.services.runs import RunDirectory
from app.services.training import write_trace_csv

logger = logging.getLogger(__name__)

CONDITIONS = ("raw", "coarse", "coarse_cgan", "clean")
PROTOCOLS = ("frame", "track")


class ConditionResult(BaseModel):
    mode: Mode
    condition: str
    protocol: str
    rank1: float
    map: float
    cmc: List[float]
    queries: int
    excluded: int


class BenchmarkReport(BaseModel):
    results: List[ConditionResult] = Field(default_factory=list)
    detector: Dict[str, Any] = Field(default_factory=dict)
    psnr: Dict[str, Dict[str, float]] = Field(default_factory=dict)

    def lookup(self, mode: Mode, condition: str, protocol: str = "frame") -> ConditionResult:
        for row in self.results:
            if row.mode == mode and row.condition == condition and row.protocol == protocol:
                return row
        raise KeyError((mode, condition, protocol))


def checkpoint_name(kind: str, mode: Optional[Mode] = None) -> str:
    return f"{kind}_{mode.value}.ocrx" if mode is not None else f"{kind}.ocrx"


def split_tracks(tracks: Sequence[FrameSequence], gallery_tracks: int) -> Tuple[List[FrameSequence], List[FrameSequence]]:
    gallery = [t for t in tracks if t.track_id < gallery_tracks]
    probe = [t for t in tracks if t.track_id >= gallery_tracks]
    if not gallery or not probe:
        raise DatasetError("benchmark needs both gallery and probe tracks; raise synth.tracks_per_identity")
    return gallery, probe


@dataclass
class BenchmarkModels:
    detector: DetectorModel
    siamese: SiameseModel
    convlstm: ConvLstmStack
    autoencoder: AutoencoderModel
    cgan: Dict[Mode, CganModel]
    sequence_length: int


def train_models(config: PipelineConfig, train_tracks: Sequence[FrameSequence], run: RunDirectory,
                 streams: RngStreams) -> BenchmarkModels:
    """Train every model of the benchmark on the gallery tracks and save checkpoints into the run."""
    checkpoints = run.path / "checkpoints"
    detector_session, _ = DetectorService(config, streams).train(labeled_frames(train_tracks))
    run.record_checkpoint(checkpoints / checkpoint_name("detector"), detector_session.save(checkpoints / checkpoint_name("detector")))
    write_trace_csv(detector_session.trace, run.path / "loss_detector.csv")

    frames = [f for t in train_tracks for f in t.clean_frames]
    identities = [t.identity_id for t in train_tracks for _ in t.clean_frames]
    pairs = sample_frame_pairs(frames, identities, streams.stream("benchmark/pairs"),
                               config.siamese.pair_count, config.siamese.positive_fraction)
    siamese_session, _ = ReidService(config, streams).train(pairs)
    run.record_checkpoint(checkpoints / checkpoint_name("siamese"), siamese_session.save(checkpoints / checkpoint_name("siamese")))
    write_trace_csv(siamese_session.trace, run.path / "loss_siamese.csv")

    length = config.convlstm.sequence_length
    samples = reconstruction_samples(train_tracks, length)
    recon = ReconstructionService(config, streams)
    convlstm_session, _ = recon.train_convlstm(samples)
    autoencoder_session, _ = recon.train_autoencoder([(s.occluded, s.clean) for s in samples])
    for session in (convlstm_session, autoencoder_session):
        path = checkpoints / checkpoint_name(session.kind)
        run.record_checkpoint(path, session.save(path))
        write_trace_csv(session.trace, run.path / f"loss_{session.kind}.csv")

    refiner = RefinerService(config, streams)
    cgans = {}
    for mode, reconstructor in ((Mode.SEQUENTIAL, convlstm_session.model), (Mode.NON_SEQUENTIAL, autoencoder_session.model)):
        refine_pairs = coarse_refine_pairs(reconstructor, samples, sequential=mode == Mode.SEQUENTIAL)
        path = checkpoints / checkpoint_name("cgan", mode)
        session, trace = refiner.train(refine_pairs, checkpoint_path=path, init_stream=f"init/cgan/{mode.value}")
        run.record_checkpoint(path)
        write_trace_csv(trace, run.path / f"loss_cgan_{mode.value}.csv")
        cgans[mode] = session.model

    return BenchmarkModels(detector=detector_session.model, siamese=siamese_session.model,
                           convlstm=convlstm_session.model, autoencoder=autoencoder_session.model,
                           cgan=cgans, sequence_length=length)


def load_models(config: PipelineConfig, checkpoint_dir: Path) -> BenchmarkModels:
    """Load previously trained checkpoints; any missing file fails before evaluation starts."""
    convlstm, length = ReconstructionService.load_convlstm(checkpoint_dir / checkpoint_name("convlstm"))
    return BenchmarkModels(
        detector=DetectorService.load(checkpoint_dir / checkpoint_name("detector")),
        siamese=ReidService.load(checkpoint_dir / checkpoint_name("siamese")),
        convlstm=convlstm,
        autoencoder=ReconstructionService.load_autoencoder(checkpoint_dir / checkpoint_name("autoencoder")),
        cgan={mode: RefinerService.load(checkpoint_dir / checkpoint_name("cgan", mode)) for mode in Mode},
        sequence_length=length,
    )


def condition_frames(models: BenchmarkModels, mode: Mode, probe: Sequence[FrameSequence]) -> Dict[str, List[List[np.ndarray]]]:
    """Per condition, the processed frames of every probe track."""
    pipeline = PipelineModels(detector=models.detector, convlstm=models.convlstm, autoencoder=models.autoencoder,
                              cgan=models.cgan[mode], sequence_length=models.sequence_length)
    out: Dict[str, List[List[np.ndarray]]] = {name: [] for name in CONDITIONS}
    for track in probe:
        routed = route_and_reconstruct(pipeline, track.frames, mode)
        out["raw"].append(list(track.frames))
        out["coarse"].append([routed.coarse.get(n, frame) for n, frame in enumerate(track.frames)])
        out["coarse_cgan"].append(routed.outputs)
        out["clean"].append(list(track.clean_frames))
    return out


def rank_condition(siamese, tracks: Sequence[List[np.ndarray]], probe: Sequence[FrameSequence],
                   gallery: Sequence[Tuple[np.ndarray, int]], gallery_ids: Sequence[str],
                   gallery_embeddings: np.ndarray) -> Dict[str, List[RankingResult]]:
    frame_results, track_results = [], []
    for frames, track in zip(tracks, probe):
        for n, frame in enumerate(frames):
            frame_results.append(rank_gallery(siamese, frame, track.identity_id, gallery,
                                              query_id=f"id{track.identity_id}/t{track.track_id}/f{n}",
                                              gallery_ids=gallery_ids, gallery_embeddings=gallery_embeddings))
        track_results.append(rank_track(siamese, frames, track.identity_id, gallery,
                                        query_id=f"id{track.identity_id}/t{track.track_id}",
                                        gallery_ids=gallery_ids, gallery_embeddings=gallery_embeddings))
    return {"frame": frame_results, "track": track_results}


def reconstruction_quality(frames: Dict[str, List[List[np.ndarray]]], probe: Sequence[FrameSequence]) -> Dict[str, float]:
    """Mean whole-frame and occluded-region PSNR of the coarse and refined outputs on truly occluded frames."""
    values: Dict[str, List[float]] = {}
    for condition in ("raw", "coarse", "coarse_cgan"):
        for t, track in enumerate(probe):
            for n, flag in enumerate(track.occlusion_flags):
                if not flag:
                    continue
                output, clean = frames[condition][t][n], track.clean_frames[n]
                values.setdefault(f"{condition}/psnr", []).append(psnr(output, clean))
                if track.masks and track.masks[n] is not None:
                    values.setdefault(f"{condition}/masked_psnr", []).append(masked_psnr(output, clean, track.masks[n]))
    return {key: mean_psnr(v) for key, v in values.items()}


def run_benchmark(config: PipelineConfig, run: RunDirectory, train_first: bool = True,
                  checkpoint_dir: Optional[Path] = None) -> BenchmarkReport:
    models = None if train_first else load_models(config, Path(checkpoint_dir or config.paths.checkpoint_dir))
    streams = RngStreams(config.run.seed)
    tracks = build_synthetic_tracks(config, streams)
    gallery_tracks, probe = split_tracks(tracks, config.benchmark.gallery_tracks_per_identity)
    if models is None:
        models = train_models(config, gallery_tracks, run, streams)

    gallery = [(frame, t.identity_id) for t in gallery_tracks for frame in t.clean_frames]
    gallery_ids = [f"id{t.identity_id}/t{t.track_id}/f{n}" for t in gallery_tracks for n in range(len(t.clean_frames))]
    gallery_embeddings = embed_batch(models.siamese, [frame for frame, _ in gallery])

    probe_labeled = [LabeledFrame(frame=f, label=flag) for t in probe for f, flag in zip(t.frames, t.occlusion_flags)]
    report = BenchmarkReport(detector=evaluate_detector(models.detector, probe_labeled))
    logger.info("Detector on probe frames: accuracy %.3f precision %.3f recall %.3f",
                report.detector["accuracy"], report.detector["precision"], report.detector["recall"])

    for mode in Mode:
        frames = condition_frames(models, mode, probe)
        report.psnr[mode.value] = reconstruction_quality(frames, probe)
        rows = []
        for condition in CONDITIONS:
            rankings = rank_condition(models.siamese, frames[condition], probe, gallery, gallery_ids, gallery_embeddings)
            for protocol in PROTOCOLS:
                evaluated = evaluate_rankings(rankings[protocol], config.benchmark.k_max)
                report.results.append(ConditionResult(mode=mode, condition=condition, protocol=protocol, **evaluated))
                rows.extend(metric_rows(evaluated, prefix=f"{condition}/{protocol}/"))
                logger.info("%s %s %s: rank-1 %.3f mAP %.3f", mode.value, condition, protocol,
                            evaluated["rank1"], evaluated["map"])
        rows.extend((name, 0, value) for name, value in sorted(report.psnr[mode.value].items()))
        run.write_metric_csv(f"benchmark_{mode.value}.csv", rows)

    write_table(report, run.path / "benchmark_table.csv")
    run.append_summary({"evaluation": "benchmark", "detector": report.detector, "psnr": report.psnr,
                        "results": [r.model_dump(mode="json") for r in report.results]})
    return report


def write_table(report: BenchmarkReport, path: Path) -> Path:
    """One row per (mode, condition, protocol), in the order the conditions build on each other."""
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["mode", "condition", "protocol", "rank1", "map"])
        for row in report.results:
            writer.writerow([row.mode.value, row.condition, row.protocol, repr(row.rank1), repr(row.map)])
    return path
