import csv
import json
import math

import numpy as np
import pytest

from app.core.errors import DatasetError, MissingCheckpointError
from app.models.config import Mode
from app.models.data import FrameSequence
from app.networks import AutoencoderModel, CganModel, ConvLstmStack, DetectorModel
from app.networks.convlstm import table_schedule
from app.services.benchmark import BenchmarkReport, ConditionResult, checkpoint_name, split_tracks
from app.services.pipeline import PipelineModels, route_and_reconstruct, write_routing_log
from app.services.reconstruction import conv_lstm_reconstruct
from app.services.refiner import refine
from app.services.runs import RunDirectory


def forced_detector(rng, occluded: bool) -> DetectorModel:
    """Detector whose score ignores the frame: zero head weight, bias +-50."""
    model = DetectorModel(16, rng, widths=(4,))
    model.encoder.head.weight.data[...] = 0.0
    model.encoder.head.bias.data[...] = 50.0 if occluded else -50.0
    return model


@pytest.fixture
def models(rng):
    return PipelineModels(
        detector=forced_detector(rng, occluded=True),
        convlstm=ConvLstmStack(table_schedule([3], [3]), 16, rng),
        autoencoder=AutoencoderModel([4], 16, rng),
        cgan=CganModel(16, rng, unet_depth=1, unet_base=2, disc_layers=1, disc_base=2),
        sequence_length=3,
    )


@pytest.fixture
def track(rng):
    return [rng.uniform(0, 1, size=(3, 16, 16)).astype(np.float32) for _ in range(4)]


@pytest.mark.parametrize("mode", list(Mode))
def test_unoccluded_frames_pass_through_bit_exact(models, track, rng, mode):
    models.detector = forced_detector(rng, occluded=False)
    copies = [f.copy() for f in track]
    routed = route_and_reconstruct(models, track, mode)
    for out, original in zip(routed.outputs, copies):
        np.testing.assert_array_equal(out, original)
        assert out.tobytes() == original.tobytes()
    assert all(entry.stages == ["detector"] and entry.decision == "unoccluded" for entry in routed.log)
    assert routed.coarse == {}


def test_sequential_routing_reads_raw_context(models, track):
    routed = route_and_reconstruct(models, track, Mode.SEQUENTIAL, refine_stage=False)
    assert [entry.context for entry in routed.log] == [[0, 0, 0], [0, 0, 1], [0, 1, 2], [1, 2, 3]]
    assert all(entry.stages == ["detector", "convlstm"] for entry in routed.log)
    expected = conv_lstm_reconstruct(models.convlstm, [track[1], track[2], track[3]], 3)
    np.testing.assert_array_equal(routed.outputs[3], expected)
    np.testing.assert_array_equal(routed.coarse[3], expected)


def test_non_sequential_routing_with_refinement(models, track):
    routed = route_and_reconstruct(models, track, Mode.NON_SEQUENTIAL)
    assert all(entry.stages == ["detector", "autoencoder", "cgan"] for entry in routed.log)
    assert [entry.context for entry in routed.log] == [[0], [1], [2], [3]]
    np.testing.assert_array_equal(routed.outputs[2], refine(models.cgan, routed.coarse[2]))
    assert all(out.shape == (3, 16, 16) for out in routed.outputs)


def test_missing_stage_fails_before_processing(models, track):
    models.cgan = None
    with pytest.raises(MissingCheckpointError):
        route_and_reconstruct(models, track, Mode.SEQUENTIAL)
    routed = route_and_reconstruct(models, track, Mode.SEQUENTIAL, refine_stage=False)
    assert len(routed.outputs) == 4
    models.autoencoder = None
    with pytest.raises(MissingCheckpointError):
        route_and_reconstruct(models, track, Mode.NON_SEQUENTIAL, refine_stage=False)


def test_empty_input(models):
    routed = route_and_reconstruct(models, [], Mode.SEQUENTIAL)
    assert routed.outputs == [] and routed.log == []


def test_routing_log_csv(models, track, tmp_path):
    routed = route_and_reconstruct(models, track[:2], Mode.SEQUENTIAL, refine_stage=False)
    path = write_routing_log([("clip", routed.log)], tmp_path / "routing.csv")
    with path.open(encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["source", "frame_index", "score", "decision", "stages", "context"]
    assert rows[2][0] == "clip"
    assert rows[2][1] == "1"
    assert rows[2][3:] == ["occluded", "detector>convlstm", "0 0 1"]


def test_run_directory_records(tiny_config, tmp_path):
    run = RunDirectory.create(tiny_config, tmp_path / "runs")
    second = RunDirectory.create(tiny_config, tmp_path / "runs", now=None)
    assert run.path != second.path
    assert (run.path / "config.json").is_file()

    checkpoint = tmp_path / "x.ocrx"
    checkpoint.write_bytes(b"data")
    digest = run.record_checkpoint(checkpoint)
    payload = json.loads((run.path / "run.json").read_text(encoding="utf-8"))
    assert payload["checkpoints"] == {str(checkpoint): digest}
    assert payload["config_hash"] == tiny_config.config_hash()

    run.append_summary({"psnr": math.inf, "values": np.array([1.5])})
    line = json.loads((run.path / "summary.jsonl").read_text(encoding="utf-8").splitlines()[0])
    assert line["psnr"] == "inf" and line["values"] == [1.5]

    run.write_metric_csv("m.csv", [("frame/cmc", 1, 0.5), ("psnr", 0, math.inf)])
    assert (run.path / "m.csv").read_text(encoding="utf-8").splitlines() == ["metric,k,value", "frame/cmc,1,0.5",
                                                                            "psnr,0,inf"]
    assert run.finish().name == "metrics.prom"
    assert "occreid_" in (run.path / "metrics.prom").read_text(encoding="utf-8")


def test_benchmark_helpers():
    assert checkpoint_name("cgan", Mode.SEQUENTIAL) == "cgan_sequential.ocrx"
    assert checkpoint_name("siamese") == "siamese.ocrx"

    frame = np.zeros((3, 2, 2), dtype=np.float32)
    tracks = [FrameSequence(track_id=t, identity_id=0, frames=[frame], occlusion_flags=[0]) for t in range(2)]
    gallery, probe = split_tracks(tracks, 1)
    assert [t.track_id for t in gallery] == [0] and [t.track_id for t in probe] == [1]
    with pytest.raises(DatasetError):
        split_tracks(tracks, 2)

    row = ConditionResult(mode=Mode.SEQUENTIAL, condition="raw", protocol="frame", rank1=0.5, map=0.4,
                          cmc=[0.5], queries=2, excluded=0)
    report = BenchmarkReport(results=[row])
    assert report.lookup(Mode.SEQUENTIAL, "raw") is row
    with pytest.raises(KeyError):
        report.lookup(Mode.NON_SEQUENTIAL, "raw")
