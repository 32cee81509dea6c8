import csv
import json

import numpy as np
import pytest

from app.core.rng import RngStreams
from app.data.datasets import labeled_frames
from app.data.synthetic import build_synthetic_tracks
from app.main import EXIT_OK, cli_main
from app.models.config import Mode
from app.services.benchmark import CONDITIONS, PROTOCOLS, load_models, run_benchmark
from app.services.detector import DetectorService, detect
from app.services.runs import RunDirectory
from scripts.write_default_config import render

from tests.conftest import config_with

pytestmark = pytest.mark.slow


def test_detector_loss_goes_down(tmp_path):
    config = config_with(tmp_path, detector={"epochs": 30})
    tracks = build_synthetic_tracks(config, RngStreams(config.run.seed))
    _, losses = DetectorService(config).train(labeled_frames(tracks))
    assert len(losses) == 30
    assert np.mean(losses[-5:]) < np.mean(losses[:5])


def test_benchmark_trains_then_reports_every_condition(tmp_path):
    config = config_with(tmp_path)
    run = RunDirectory.create(config)
    report = run_benchmark(config, run, train_first=True)

    assert len(report.results) == len(Mode) * len(CONDITIONS) * len(PROTOCOLS)
    for row in report.results:
        assert 0.0 <= row.rank1 <= 1.0 and 0.0 <= row.map <= 1.0
        assert len(row.cmc) == config.benchmark.k_max
        assert row.cmc == sorted(row.cmc)
    assert set(report.psnr) == {m.value for m in Mode}
    assert report.detector["count"] > 0

    for name in ("benchmark_sequential.csv", "benchmark_non_sequential.csv", "benchmark_table.csv", "summary.jsonl"):
        assert (run.path / name).is_file(), name
    with (run.path / "benchmark_table.csv").open(encoding="utf-8") as handle:
        table = list(csv.reader(handle))
    assert table[0] == ["mode", "condition", "protocol", "rank1", "map"]
    assert len(table) == 1 + len(report.results)
    summary = json.loads((run.path / "summary.jsonl").read_text(encoding="utf-8").splitlines()[-1])
    assert summary["evaluation"] == "benchmark"

    checkpoints = json.loads((run.path / "run.json").read_text(encoding="utf-8"))["checkpoints"]
    assert len(checkpoints) == 6

    loaded = load_models(config, run.path / "checkpoints")
    probe = build_synthetic_tracks(config, RngStreams(config.run.seed))[-1].frames[0]
    assert loaded.sequence_length == config.convlstm.sequence_length
    assert set(loaded.cgan) == set(Mode)
    assert 0.0 < detect(loaded.detector, probe) < 1.0

    again = run_benchmark(config, RunDirectory.create(config), train_first=False,
                          checkpoint_dir=run.path / "checkpoints")
    for a, b in zip(report.results, again.results):
        assert (a.mode, a.condition, a.protocol) == (b.mode, b.condition, b.protocol)
        assert a.rank1 == pytest.approx(b.rank1) and a.map == pytest.approx(b.map)


def test_benchmark_command(tmp_path, capsys):
    config = config_with(tmp_path)
    path = tmp_path / "experiment.toml"
    path.write_text(render(config), encoding="utf-8")
    assert cli_main(["benchmark", "--config", str(path), "--train-first"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "mode\tcondition\tprotocol\trank1\tmap"
    assert "coarse_cgan" in out


def test_benchmark_orders_the_conditions(tmp_path):
    config = config_with(
        tmp_path,
        synth={"identities": 4, "track_length": 5, "occluded_fraction": 0.75},
        occluder={"area_min": 0.4, "area_max": 0.6},
        detector={"epochs": 40},
        convlstm={"epochs": 60},
        autoencoder={"epochs": 60},
        cgan={"epochs": 30},
        siamese={"epochs": 80, "pair_count": 48, "learning_rate": 3e-3},
    )
    report = run_benchmark(config, RunDirectory.create(config), train_first=True)

    for mode in Mode:
        clean = report.lookup(mode, "clean")
        assert clean.rank1 == 1.0
        assert clean.map >= 0.99
        assert report.lookup(mode, "raw").map < clean.map
    raw = report.lookup(Mode.SEQUENTIAL, "raw").map
    refined = np.mean([report.lookup(mode, "coarse_cgan").map for mode in Mode])
    assert refined >= raw
