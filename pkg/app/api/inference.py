"""
Inference subcommands: detection-gated reconstruction of a frame folder,
re-identification evaluation over manifests, and the synthetic benchmark.
"""
import logging
from pathlib import Path
from typing import List, Optional, Tuple

import click
import numpy as np

from app.api.data import config_options, get_pipeline_config, open_run
from app.data.datasets import load_sequences
from app.models.config import Mode, PipelineConfig
from app.models.data import RankingResult
from app.services.benchmark import checkpoint_name, run_benchmark
from app.services.detector import DetectorService
from app.services.metrics import evaluate_rankings, format_value, metric_rows
from app.services.pipeline import PipelineModels, RoutedFrames, route_and_reconstruct, write_routing_log
from app.services.reconstruction import ReconstructionService
from app.services.refiner import RefinerService
from app.services.reid import ReidService, embed_batch, rank_gallery, rank_track
from app.storage.frames import read_frame, write_frame
from app.storage.manifest import read_manifest

logger = logging.getLogger(__name__)


def get_pipeline_models(config: PipelineConfig, mode: Mode, refine_stage: bool = True,
                        checkpoint_dir: Optional[Path] = None) -> PipelineModels:
    """Load only the checkpoints the mode needs; a missing file fails here, before any frame is read."""
    directory = Path(checkpoint_dir or config.paths.checkpoint_dir)
    models = PipelineModels(detector=DetectorService.load(directory / checkpoint_name("detector")))
    if mode == Mode.SEQUENTIAL:
        models.convlstm, models.sequence_length = ReconstructionService.load_convlstm(directory / checkpoint_name("convlstm"))
    else:
        models.autoencoder = ReconstructionService.load_autoencoder(directory / checkpoint_name("autoencoder"))
    if refine_stage:
        models.cgan = RefinerService.load(directory / checkpoint_name("cgan", mode))
    models.require(mode, refine_stage)
    return models


def read_frame_folder(folder: Path) -> List[Tuple[str, np.ndarray]]:
    names = sorted(p for p in folder.iterdir() if p.suffix.lower() == ".ppm")
    if not names:
        raise click.BadParameter(f"no .ppm frames in {folder}", param_hint="--in")
    return [(p.name, read_frame(p)) for p in names]


def _checkpoint_dir_option(command):
    return click.option("--ckpt-dir", type=click.Path(file_okay=False, path_type=Path), default=None,
                        help="Checkpoint directory (default: paths.checkpoint_dir)")(command)


@click.command("reconstruct")
@config_options
@click.option("--mode", type=click.Choice([m.value for m in Mode]), default=None, help="default: run.mode")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="Folder of PPM frames; sorted file names give the track order")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--no-refine", is_flag=True, help="Skip the cGAN and write the coarse reconstruction")
@_checkpoint_dir_option
def reconstruct(config_path, seed, mode, in_dir, out_dir, no_refine, ckpt_dir):
    """Route every frame through the detector and reconstruct the occluded ones."""
    config = get_pipeline_config(config_path, seed)
    mode = Mode(mode) if mode is not None else config.run.mode
    models = get_pipeline_models(config, mode, not no_refine, ckpt_dir)
    frames = read_frame_folder(in_dir)
    run = open_run(config)
    routed: RoutedFrames = route_and_reconstruct(models, [f for _, f in frames], mode, refine_stage=not no_refine)
    written = 0
    for (name, _), entry, output in zip(frames, routed.log, routed.outputs):
        if entry.decision == "occluded":
            write_frame(output, out_dir / name)
            written += 1
    logs = [(str(in_dir), routed.log)]
    write_routing_log(logs, out_dir / "routing.csv")
    write_routing_log(logs, run.path / "routing.csv")
    run.append_summary({"reconstruction": mode.value, "frames": len(frames), "reconstructed": written})
    run.finish()
    click.echo(f"{written} of {len(frames)} frames reconstructed into {out_dir}")


def evaluate_manifests(siamese, gallery_path: Path, probe_path: Path,
                       models: Optional[PipelineModels] = None,
                       mode: Optional[Mode] = None) -> Tuple[List[RankingResult], List[RankingResult]]:
    """Frame-level and track-level rankings of every probe against the gallery manifest."""
    gallery_manifest = read_manifest(gallery_path)
    gallery = [(read_frame(gallery_manifest.resolve(r.frame_path)), r.identity_id) for r in gallery_manifest.records]
    gallery_ids = [str(r.frame_path) for r in gallery_manifest.records]
    embeddings = embed_batch(siamese, [frame for frame, _ in gallery])

    frame_results, track_results = [], []
    for track in load_sequences(read_manifest(probe_path)):
        frames = track.frames
        if models is not None:
            frames = route_and_reconstruct(models, frames, mode).outputs
        prefix = f"id{track.identity_id}/t{track.track_id}"
        for n, frame in enumerate(frames):
            frame_results.append(rank_gallery(siamese, frame, track.identity_id, gallery, f"{prefix}/f{n}",
                                              gallery_ids, embeddings))
        track_results.append(rank_track(siamese, frames, track.identity_id, gallery, prefix, gallery_ids, embeddings))
    return frame_results, track_results


@click.command("evaluate")
@config_options
@click.option("--gallery", "gallery_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--probe", "probe_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Siamese checkpoint")
@click.option("--mode", type=click.Choice([m.value for m in Mode]), default=None,
              help="Reconstruct probe frames first with this pipeline mode")
@_checkpoint_dir_option
def evaluate(config_path, seed, gallery_path, probe_path, ckpt, mode, ckpt_dir):
    """CMC and mAP of the probe manifest against the gallery manifest."""
    config = get_pipeline_config(config_path, seed)
    siamese = ReidService.load(ckpt)
    models = None
    if mode is not None:
        mode = Mode(mode)
        models = get_pipeline_models(config, mode, checkpoint_dir=ckpt_dir)
    run = open_run(config)
    run.record_checkpoint(ckpt)
    frame_results, track_results = evaluate_manifests(siamese, gallery_path, probe_path, models, mode)
    k_max = config.benchmark.k_max
    frame_report = evaluate_rankings(frame_results, k_max)
    track_report = evaluate_rankings(track_results, k_max)
    target = run.write_metric_csv("evaluate.csv",
                                  metric_rows(frame_report, "frame/") + metric_rows(track_report, "track/"))
    run.append_summary({"evaluation": "manifest", "gallery": gallery_path, "probe": probe_path,
                        "mode": mode.value if mode else "raw", "frame": frame_report, "track": track_report})
    run.finish()
    click.echo(f"rank-1 {format_value(frame_report['rank1'])} mAP {format_value(frame_report['map'])} -> {target}")


@click.command("benchmark")
@config_options
@click.option("--train-first", is_flag=True, help="Train every model before evaluating")
@_checkpoint_dir_option
def benchmark(config_path, seed, train_first, ckpt_dir):
    """Rank-1 and mAP under raw, coarse, coarse + cGAN and clean probe frames for both modes."""
    config = get_pipeline_config(config_path, seed)
    run = open_run(config)
    report = run_benchmark(config, run, train_first=train_first, checkpoint_dir=ckpt_dir)
    run.finish()
    click.echo("mode\tcondition\tprotocol\trank1\tmap")
    for row in report.results:
        click.echo(f"{row.mode.value}\t{row.condition}\t{row.protocol}\t{row.rank1:.4f}\t{row.map:.4f}")
    click.echo(f"run directory: {run.path}")
