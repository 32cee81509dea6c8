import logging

import numpy as np
import pytest

from app.core.rng import RngStreams
from app.models.config import build_pipeline_config
from app.services.runs import RunDirectory


def tiny_config_data(frame_size: int = 16, seed: int = 7) -> dict:
    """Desk-scale config small enough to train every model in seconds."""
    return {
        "run": {"seed": seed, "frame_size": frame_size, "log_every": 1000},
        "synth": {"identities": 3, "tracks_per_identity": 2, "track_length": 4, "occluded_fraction": 0.5,
                  "max_velocity": 1, "jitter": 1},
        "occluder": {"area_min": 0.15, "area_max": 0.3},
        "detector": {"widths": [4, 8], "epochs": 2, "batch_size": 4},
        "convlstm": {"widths": [4, 3], "kernels": [3, 1], "epochs": 2, "batch_size": 4},
        "autoencoder": {"widths": [4, 8], "epochs": 2, "batch_size": 4},
        "cgan": {"unet_depth": 2, "unet_base": 4, "disc_layers": 2, "disc_base": 4, "epochs": 2, "max_pairs": 4},
        "siamese": {"widths": [4, 8], "embedding_dim": 8, "head_hidden": 8, "epochs": 2, "batch_size": 4,
                    "pair_count": 8},
        "benchmark": {"k_max": 3},
    }


def config_with(tmp_path, **sections):
    """Tiny config with per-section overrides and outputs under tmp_path."""
    data = tiny_config_data()
    for section, values in sections.items():
        data[section] = {**data.get(section, {}), **values}
    data["paths"] = {"runs_dir": str(tmp_path / "runs"), "checkpoint_dir": str(tmp_path / "checkpoints")}
    return build_pipeline_config(data)


@pytest.fixture
def tiny_config(tmp_path):
    data = tiny_config_data()
    data["paths"] = {"runs_dir": str(tmp_path / "runs"), "checkpoint_dir": str(tmp_path / "checkpoints")}
    return build_pipeline_config(data)


@pytest.fixture
def streams():
    return RngStreams(1234)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def run_dir(tiny_config, tmp_path):
    return RunDirectory(tmp_path / "run", tiny_config)


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.WARNING)

