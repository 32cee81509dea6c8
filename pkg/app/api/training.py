"""
train-* subcommands. Each one reads a manifest, trains one model, saves its
checkpoint and leaves a run directory with the loss trace and run.json.
"""
import logging
from pathlib import Path
from typing import List, Optional

import click

from app.api.data import config_options, get_pipeline_config, open_run
from app.core.errors import ConfigurationError
from app.core.rng import RngStreams
from app.data.datasets import labeled_frames, load_sequences, reconstruction_samples
from app.data.sampling import sample_pairs
from app.models.config import Mode, PipelineConfig
from app.models.data import FrameSequence
from app.services.detector import DetectorService
from app.services.reconstruction import ReconstructionService, coarse_refine_pairs
from app.services.refiner import RefinerService
from app.services.reid import ReidService
from app.services.runs import RunDirectory
from app.services.training import TrainingSession, write_trace_csv
from app.storage.manifest import read_manifest

logger = logging.getLogger(__name__)


def manifest_sequences(manifest: Optional[Path], fallback: Optional[Path], what: str) -> List[FrameSequence]:
    path = manifest or fallback
    if path is None:
        raise ConfigurationError(f"no {what} manifest: pass --manifest or set it under [paths]")
    return load_sequences(read_manifest(path))


def checkpoint_target(config: PipelineConfig, out: Optional[Path], name: str) -> Path:
    return out if out is not None else Path(config.paths.checkpoint_dir) / name


def finish_training(run: RunDirectory, session: TrainingSession, target: Path, digest: Optional[str] = None) -> None:
    run.record_checkpoint(target, digest)
    write_trace_csv(session.trace, run.path / f"loss_{session.kind}.csv")
    run.append_summary({"training": session.kind, "epochs": session.epoch, "checkpoint": target,
                        "final": session.trace[-1] if session.trace else {}})
    run.finish()
    click.echo(str(target))


def training_options(command):
    command = click.option("--resume", type=click.Path(dir_okay=False, exists=True, path_type=Path), default=None,
                           help="Continue from a checkpoint of the same model")(command)
    command = click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None,
                           help="Checkpoint to write (default: paths.checkpoint_dir)")(command)
    command = click.option("--manifest", type=click.Path(dir_okay=False, exists=True, path_type=Path), default=None,
                           help="Training manifest (default: paths.train_manifest)")(command)
    return config_options(command)


@click.command("train-detector")
@training_options
def train_detector(config_path, seed, manifest, out, resume):
    """Train the occlusion detector on occluded and clean frames."""
    config = get_pipeline_config(config_path, seed)
    dataset = labeled_frames(manifest_sequences(manifest, config.paths.train_manifest, "train"))
    run = open_run(config)
    session, _ = DetectorService(config).train(dataset, resume)
    target = checkpoint_target(config, out, "detector.ocrx")
    finish_training(run, session, target, session.save(target))


@click.command("train-convlstm")
@training_options
def train_convlstm(config_path, seed, manifest, out, resume):
    """Train the Conv-LSTM on (n-2, n-1, occluded n) -> clean n samples."""
    config = get_pipeline_config(config_path, seed)
    sequences = manifest_sequences(manifest, config.paths.train_manifest, "train")
    samples = reconstruction_samples(sequences, config.convlstm.sequence_length)
    run = open_run(config)
    session, _ = ReconstructionService(config).train_convlstm(samples, resume)
    target = checkpoint_target(config, out, "convlstm.ocrx")
    finish_training(run, session, target, session.save(target))


@click.command("train-autoencoder")
@training_options
def train_autoencoder(config_path, seed, manifest, out, resume):
    """Train the autoencoder on (occluded, clean) frame pairs."""
    config = get_pipeline_config(config_path, seed)
    samples = reconstruction_samples(manifest_sequences(manifest, config.paths.train_manifest, "train"), 1)
    run = open_run(config)
    session, _ = ReconstructionService(config).train_autoencoder([(s.occluded, s.clean) for s in samples], resume)
    target = checkpoint_target(config, out, "autoencoder.ocrx")
    finish_training(run, session, target, session.save(target))


@click.command("train-cgan")
@training_options
@click.option("--mode", type=click.Choice([m.value for m in Mode]), default=None,
              help="Which coarse reconstructor conditions the cGAN (default: run.mode)")
@click.option("--coarse-ckpt", type=click.Path(dir_okay=False, exists=True, path_type=Path), default=None,
              help="Conv-LSTM or autoencoder checkpoint producing the coarse frames")
def train_cgan(config_path, seed, manifest, out, resume, mode, coarse_ckpt):
    """Train the cGAN refiner on coarse reconstructions of the training frames."""
    config = get_pipeline_config(config_path, seed)
    mode = Mode(mode) if mode is not None else config.run.mode
    sequential = mode == Mode.SEQUENTIAL
    coarse_name = "convlstm.ocrx" if sequential else "autoencoder.ocrx"
    coarse_path = coarse_ckpt or Path(config.paths.checkpoint_dir) / coarse_name
    if sequential:
        reconstructor, length = ReconstructionService.load_convlstm(coarse_path)
    else:
        reconstructor, length = ReconstructionService.load_autoencoder(coarse_path), 1
    sequences = manifest_sequences(manifest, config.paths.train_manifest, "train")
    pairs = coarse_refine_pairs(reconstructor, reconstruction_samples(sequences, length), sequential)
    run = open_run(config)
    target = checkpoint_target(config, out, f"cgan_{mode.value}.ocrx")
    session, _ = RefinerService(config).train(pairs, checkpoint_path=target, resume=resume,
                                              init_stream=f"init/cgan/{mode.value}")
    finish_training(run, session, target)


@click.command("train-siamese")
@training_options
def train_siamese(config_path, seed, manifest, out, resume):
    """Train the Siamese network on contrastive pairs drawn from a manifest (default: the gallery)."""
    config = get_pipeline_config(config_path, seed)
    path = manifest or config.paths.gallery_manifest
    if path is None:
        raise ConfigurationError("no gallery manifest: pass --manifest or set paths.gallery_manifest")
    streams = RngStreams(config.run.seed)
    section = config.siamese
    pairs = sample_pairs(read_manifest(path), streams.stream("data/siamese/pairs"),
                         section.pair_count, section.positive_fraction)
    run = open_run(config)
    session, _ = ReidService(config, streams).train(pairs, resume)
    target = checkpoint_target(config, out, "siamese.ocrx")
    finish_training(run, session, target, session.save(target))
