import numpy as np
import pytest

from app.core.errors import ConfigurationError, DatasetError
from app.core.rng import RngStreams
from app.data.datasets import (
    context_indices,
    context_window,
    labeled_frames,
    load_sequences,
    reconstruction_samples,
    write_tracks,
)
from app.data.synthetic import (
    build_synthetic_tracks,
    identity_appearance,
    occlusion_count,
    snap,
    synth_occlude,
    synth_sequence,
)
from app.models.config import OccluderSection, build_pipeline_config
from app.models.data import Split
from app.storage.manifest import read_manifest

from tests.conftest import tiny_config_data


def test_tracks_are_deterministic_per_seed(tiny_config):
    first = build_synthetic_tracks(tiny_config, RngStreams(5))
    second = build_synthetic_tracks(tiny_config, RngStreams(5))
    other = build_synthetic_tracks(tiny_config, RngStreams(6))
    for a, b in zip(first, second):
        assert a.occlusion_flags == b.occlusion_flags
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa, fb)
    assert any(not np.array_equal(a.frames[0], c.frames[0]) for a, c in zip(first, other))


def test_identity_streams_do_not_depend_on_the_dataset_size(tiny_config):
    data = tiny_config_data()
    data["synth"]["identities"] = 5
    larger = build_pipeline_config(data)
    streams = RngStreams(3)
    small_track = synth_sequence(streams, tiny_config, 1, 0)
    large_track = synth_sequence(streams, larger, 1, 0)
    for a, b in zip(small_track.frames, large_track.frames):
        np.testing.assert_array_equal(a, b)


def test_identities_get_distinct_colours(tiny_config):
    streams = RngStreams(0)
    colours = [identity_appearance(streams, i, tiny_config.synth, 16).color for i in range(3)]
    for i in range(3):
        for j in range(i + 1, 3):
            assert np.abs(colours[i] - colours[j]).max() > 0.05


def test_frames_are_on_the_8bit_grid(tiny_config):
    track = synth_sequence(RngStreams(1), tiny_config, 0, 0)
    assert len(track) == tiny_config.synth.track_length
    for frame in track.frames:
        assert frame.shape == (3, 16, 16)
        assert frame.dtype == np.float32
        np.testing.assert_array_equal(snap(frame), frame)


@pytest.mark.parametrize("length,fraction,expected", [(4, 0.5, 2), (5, 0.5, 3), (3, 0.5, 2), (4, 0.4, 2), (8, 0.0, 0)])
def test_occlusion_count_rounds_half_up(length, fraction, expected):
    assert occlusion_count(length, fraction) == expected


def test_occluded_tracks_keep_their_ground_truth(tiny_config):
    for track in build_synthetic_tracks(tiny_config, RngStreams(2)):
        assert sum(track.occlusion_flags) == 2
        for flag, frame, clean, mask in zip(track.occlusion_flags, track.frames, track.clean_frames, track.masks):
            if not flag:
                assert mask is None
                np.testing.assert_array_equal(frame, clean)
                continue
            outside = np.broadcast_to(mask == 0, frame.shape)
            np.testing.assert_array_equal(frame[outside], clean[outside])
            share = mask.sum() / mask.size
            assert 0.15 <= share <= 0.3


@pytest.mark.parametrize("seed", range(20))
def test_rectangle_occluder_area_is_in_range(seed):
    occluder = OccluderSection(area_min=0.2, area_max=0.5)
    frame = np.full((3, 16, 16), 0.5, dtype=np.float32)
    out, mask = synth_occlude(frame, np.random.default_rng(seed), occluder)
    assert 0.2 <= mask.mean() <= 0.5
    assert set(np.unique(mask)) <= {0.0, 1.0}
    np.testing.assert_array_equal(out[np.broadcast_to(mask == 0, out.shape)], 0.5)


def test_vertical_bar_spans_the_full_height():
    occluder = OccluderSection(family="vertical_bar", area_min=0.25, area_max=0.25, fill="noise")
    _, mask = synth_occlude(np.zeros((3, 16, 16), dtype=np.float32), np.random.default_rng(0), occluder)
    columns = np.flatnonzero(mask[0].any(axis=0))
    assert len(columns) == 4
    assert mask[0][:, columns].all()


def test_zero_area_occluder_leaves_the_frame_alone():
    frame = np.random.default_rng(0).uniform(size=(3, 8, 8)).astype(np.float32)
    out, mask = synth_occlude(frame, np.random.default_rng(1), OccluderSection(area_min=0.0, area_max=0.0))
    np.testing.assert_array_equal(out, frame)
    assert not mask.any()


def test_invalid_occluder_range_is_rejected():
    with pytest.raises(ConfigurationError):
        build_pipeline_config({"occluder": {"area_min": 0.6, "area_max": 0.4}})


def test_context_indices_pad_with_the_first_frame():
    assert context_indices(0, 3) == [0, 0, 0]
    assert context_indices(1, 3) == [0, 0, 1]
    assert context_indices(5, 3) == [3, 4, 5]
    assert context_indices(2, 1) == [2]
    with pytest.raises(DatasetError):
        context_indices(2, 0)


def test_context_window_bounds():
    frames = [np.full((3, 2, 2), i / 10, dtype=np.float32) for i in range(4)]
    window, indices = context_window(frames, 1, 3)
    assert indices == [0, 0, 1]
    assert window[0] is frames[0] and window[2] is frames[1]
    with pytest.raises(DatasetError):
        context_window(frames, 4, 3)


def test_training_samples(tiny_config):
    tracks = build_synthetic_tracks(tiny_config, RngStreams(4))
    assert len(labeled_frames(tracks)) == 3 * 2 * 4
    samples = reconstruction_samples(tracks, length=3)
    assert len(samples) == sum(sum(t.occlusion_flags) for t in tracks)
    assert all(len(s.context) == 2 for s in samples)
    clean = build_synthetic_tracks(tiny_config, RngStreams(4), occlude=False)
    with pytest.raises(DatasetError):
        reconstruction_samples(clean)


def test_written_tracks_load_back_unchanged(tiny_config, tmp_path):
    tracks = build_synthetic_tracks(tiny_config, RngStreams(8))
    paths = write_tracks(tracks, tmp_path / "data", gallery_tracks=1)
    assert set(paths) == set(Split)

    gallery = read_manifest(paths[Split.GALLERY])
    assert all(r.flag == 0 and r.track_id == 0 for r in gallery.records)
    assert gallery.identities == [0, 1, 2]

    probe_tracks = load_sequences(read_manifest(paths[Split.PROBE]))
    originals = [t for t in tracks if t.track_id >= 1]
    assert len(probe_tracks) == len(originals)
    for loaded, original in zip(probe_tracks, originals):
        assert loaded.occlusion_flags == original.occlusion_flags
        for a, b in zip(loaded.frames, original.frames):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(loaded.clean_frames, original.clean_frames):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(loaded.masks, original.masks):
            assert (a is None) == (b is None)
            if a is not None:
                np.testing.assert_array_equal(a, b)


def test_write_tracks_needs_a_probe_split(tiny_config, tmp_path):
    tracks = build_synthetic_tracks(tiny_config, RngStreams(8))
    with pytest.raises(DatasetError):
        write_tracks(tracks, tmp_path / "data", gallery_tracks=2)
