import logging
from pathlib import Path
from typing import Optional

import click

from app.core.config import settings
from app.core.rng import RngStreams
from app.data.datasets import write_tracks
from app.data.synthetic import build_synthetic_tracks
from app.models.config import PipelineConfig, load_pipeline_config
from app.services.runs import RunDirectory

logger = logging.getLogger(__name__)


def get_pipeline_config(config_path: Optional[Path], seed: Optional[int]) -> PipelineConfig:
    """
    Resolve the experiment configuration for a command.
    --seed wins over the file; without either, OCCREID_SEED applies.
    """
    if seed is None and config_path is None:
        seed = settings.SEED
    config = load_pipeline_config(config_path, seed)
    if config_path is None:
        config = config.model_copy(update={"paths": config.paths.model_copy(update={
            "runs_dir": Path(settings.RUNS_DIR),
            "checkpoint_dir": Path(settings.CHECKPOINT_DIR),
        })})
    return config


def open_run(config: PipelineConfig) -> RunDirectory:
    return RunDirectory.create(config)


def config_options(command):
    """--config and --seed, shared by every subcommand."""
    command = click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None,
                           help="Override run.seed")(command)
    command = click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path),
                           default=None, help="TOML experiment file")(command)
    return command


@click.command("synth-data")
@config_options
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=Path("data/synthetic"),
              show_default=True, help="Directory for frames and manifests")
@click.option("--clean", is_flag=True, help="Do not add synthetic occluders")
def synth_data(config_path: Optional[Path], seed: Optional[int], out_dir: Path, clean: bool):
    """Generate synthetic tracks and the train, gallery and probe manifests."""
    config = get_pipeline_config(config_path, seed)
    tracks = build_synthetic_tracks(config, RngStreams(config.run.seed), occlude=not clean)
    paths = write_tracks(tracks, out_dir, config.benchmark.gallery_tracks_per_identity)
    for split, path in sorted(paths.items(), key=lambda item: item[0].value):
        click.echo(f"{split.value}\t{path}")
