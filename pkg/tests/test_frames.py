import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st
from hypothesis.extra.numpy import arrays

from app.core.errors import DimensionError, FrameFormatError
from app.storage.frames import decode_netpbm, encode_netpbm, quantize, read_frame, read_mask, write_frame, write_mask


def test_frame_write_read_write_is_byte_identical(tmp_path, rng):
    frame = rng.uniform(0, 1, size=(3, 5, 7)).astype(np.float32)
    first, second = tmp_path / "a.ppm", tmp_path / "b.ppm"
    write_frame(frame, first)
    loaded = read_frame(first)
    write_frame(loaded, second)
    assert first.read_bytes() == second.read_bytes()
    assert loaded.shape == (3, 5, 7)
    assert loaded.dtype == np.float32
    np.testing.assert_allclose(loaded, quantize(frame) / 255.0, atol=1e-7)


def test_canonical_header(tmp_path):
    path = tmp_path / "f.ppm"
    write_frame(np.zeros((3, 2, 4), dtype=np.float32), path)
    assert path.read_bytes().startswith(b"P6\n4 2\n255\n")
    assert len(path.read_bytes()) == len(b"P6\n4 2\n255\n") + 3 * 2 * 4


def test_quantize_rounds_half_up():
    values = np.array([0.0, 0.25, 0.5, 1.0, 1.2, -0.1])
    np.testing.assert_array_equal(quantize(values), [0, 64, 128, 255, 255, 0])


def test_header_comments_and_whitespace_are_skipped():
    payload = bytes(range(12))
    buf = b"P6 # a comment\n2\t# width done\n  2\n255\n" + payload
    pixels = decode_netpbm(buf)
    assert pixels.shape == (3, 2, 2)
    np.testing.assert_array_equal(pixels[:, 0, 0], [0, 1, 2])
    np.testing.assert_array_equal(pixels[:, 1, 1], [9, 10, 11])


def test_mask_round_trip(tmp_path):
    mask = np.zeros((1, 4, 4), dtype=np.float32)
    mask[0, 1:3, 1:3] = 1.0
    path = tmp_path / "m.pgm"
    write_mask(mask, path)
    assert path.read_bytes().startswith(b"P5\n")
    np.testing.assert_array_equal(read_mask(path), mask)


def test_frame_and_mask_readers_reject_the_other_format(tmp_path):
    write_mask(np.ones((1, 2, 2), dtype=np.float32), tmp_path / "m.pgm")
    write_frame(np.ones((3, 2, 2), dtype=np.float32), tmp_path / "f.ppm")
    with pytest.raises(FrameFormatError):
        read_frame(tmp_path / "m.pgm")
    with pytest.raises(FrameFormatError):
        read_mask(tmp_path / "f.ppm")


@pytest.mark.parametrize("buf,fragment", [
    (b"P3\n1 1\n255\n000", "magic"),
    (b"P6\n1 1\n65535\n" + bytes(6), "8-bit"),
    (b"P6\n0 1\n255\n", "empty"),
    (b"P6\nx 1\n255\n" + bytes(3), "width"),
    (b"P6\n1 1\n255", "whitespace"),
])
def test_malformed_headers(buf, fragment):
    with pytest.raises(FrameFormatError) as err:
        decode_netpbm(buf)
    assert fragment in str(err.value)


def test_every_truncation_is_reported():
    buf = encode_netpbm(np.arange(3 * 3 * 2, dtype=np.uint8).reshape(3, 3, 2))
    for cut in range(len(buf)):
        with pytest.raises(FrameFormatError):
            decode_netpbm(buf[:cut])


def test_truncated_payload_reports_offset():
    buf = encode_netpbm(np.zeros((3, 2, 2), dtype=np.uint8))
    header = len(b"P6\n2 2\n255\n")
    with pytest.raises(FrameFormatError) as err:
        decode_netpbm(buf[:-5])
    assert err.value.offset == header + 12 - 5


def test_write_frame_rejects_wrong_channels(tmp_path):
    with pytest.raises(DimensionError):
        write_frame(np.zeros((1, 2, 2)), tmp_path / "x.ppm")


@hyp_settings(max_examples=200, deadline=None)
@given(st.binary(max_size=64))
def test_arbitrary_bytes_either_decode_or_raise_frame_format_error(tail):
    for magic in (b"P6", b"P5", b"P6\n"):
        try:
            pixels = decode_netpbm(magic + tail)
        except FrameFormatError:
            continue
        assert pixels.dtype == np.uint8
        assert pixels.shape[0] in (1, 3)


@hyp_settings(max_examples=80, deadline=None)
@given(st.sampled_from([1, 3]).flatmap(
    lambda c: arrays(np.uint8, st.tuples(st.just(c), st.integers(1, 6), st.integers(1, 6)))))
def test_netpbm_round_trip(pixels):
    encoded = encode_netpbm(pixels)
    decoded = decode_netpbm(encoded)
    np.testing.assert_array_equal(decoded, pixels)
    assert encode_netpbm(decoded) == encoded
