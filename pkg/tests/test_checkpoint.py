import struct

import numpy as np
import pytest

from app.core.errors import CheckpointFormatError, CheckpointKindError, CheckpointVersionError
from app.storage.checkpoint import (
    ModelCheckpoint,
    decode_checkpoint,
    encode_checkpoint,
    file_sha256,
    load_checkpoint,
    merge_tables,
    save_checkpoint,
    split_table,
)


@pytest.fixture
def checkpoint():
    rng = np.random.default_rng(0)
    return ModelCheckpoint(
        kind="siamese",
        epoch=3,
        parameters={"encoder.stem.kernel": rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
                    "encoder.stem.bias": np.zeros(4, dtype=np.float32)},
        optimizer={"adam/m/encoder.stem.bias": np.ones(4, dtype=np.float32)},
        extra={"optimizer": {"adam": {"step_counts": {"encoder.stem.bias": 3}}}, "losses": [0.5, 0.25]},
    )


def test_save_load_save_is_byte_identical(tmp_path, checkpoint):
    first, second = tmp_path / "a.ocrx", tmp_path / "b.ocrx"
    digest = save_checkpoint(checkpoint, first)
    loaded = load_checkpoint(first, expected_kind="siamese")
    assert save_checkpoint(loaded, second) == digest
    assert first.read_bytes() == second.read_bytes()
    assert file_sha256(first) == digest
    assert loaded.epoch == 3
    assert list(loaded.parameters) == list(checkpoint.parameters)
    np.testing.assert_array_equal(loaded.parameters["encoder.stem.kernel"],
                                  checkpoint.parameters["encoder.stem.kernel"])
    assert loaded.extra == checkpoint.extra


def test_header_layout(checkpoint):
    buf = encode_checkpoint(checkpoint)
    assert buf[:4] == b"OCRX"
    assert struct.unpack("<I", buf[4:8])[0] == 1
    assert struct.unpack("<I", buf[8:12])[0] == len("siamese")
    assert buf[12:19] == b"siamese"


def test_every_truncation_is_reported(checkpoint):
    buf = encode_checkpoint(checkpoint)
    for cut in range(0, len(buf), 7):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(buf[:cut])


def test_trailing_bytes_are_rejected(checkpoint):
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(encode_checkpoint(checkpoint) + b"\0")


def test_bad_magic(checkpoint):
    buf = encode_checkpoint(checkpoint)
    with pytest.raises(CheckpointFormatError) as err:
        decode_checkpoint(b"NOPE" + buf[4:])
    assert "magic" in str(err.value)


def test_unknown_version(checkpoint):
    buf = encode_checkpoint(checkpoint)
    with pytest.raises(CheckpointVersionError):
        decode_checkpoint(buf[:4] + struct.pack("<I", 2) + buf[8:])


def test_kind_mismatch(tmp_path, checkpoint):
    path = tmp_path / "s.ocrx"
    save_checkpoint(checkpoint, path)
    with pytest.raises(CheckpointKindError) as err:
        load_checkpoint(path, expected_kind="detector")
    assert (err.value.expected, err.value.actual) == ("detector", "siamese")


def test_unknown_kind_cannot_be_saved(checkpoint):
    with pytest.raises(CheckpointKindError):
        encode_checkpoint(checkpoint.model_copy(update={"kind": "resnet"}))


def test_merge_and_split_tables():
    a, b = {"w": np.zeros(2)}, {"w": np.ones(2)}
    merged = merge_tables([("generator/", a), ("discriminator/", b)])
    assert list(merged) == ["generator/w", "discriminator/w"]
    np.testing.assert_array_equal(split_table(merged, "discriminator/")["w"], np.ones(2))
    with pytest.raises(CheckpointFormatError):
        merge_tables([("x", {"y": a["w"]}), ("", {"xy": b["w"]})])


def single_record(dims, payload=b""):
    """A siamese checkpoint holding one parameter record with the given header dims."""
    u32 = struct.Struct("<I").pack
    return b"".join([
        b"OCRX", u32(1), u32(7), b"siamese", u32(0),
        u32(1), u32(1), b"w", u32(len(dims)), *(u32(d) for d in dims), payload,
        u32(0), u32(0),
    ])


@pytest.mark.parametrize("dims", [
    (2 ** 32 - 1, 2 ** 32 - 1),
    (2 ** 32 - 1, 2 ** 32 - 1, 2 ** 32 - 1),
    (2 ** 16, 2 ** 16, 2 ** 16, 2 ** 16),
    (2 ** 31,),
])
def test_oversized_shapes_are_reported(dims):
    with pytest.raises(CheckpointFormatError) as err:
        decode_checkpoint(single_record(dims, payload=b"\0" * 8))
    assert "'w'" in str(err.value)


def test_hand_built_record_decodes():
    loaded = decode_checkpoint(single_record((2, 1), payload=np.array([1.5, -2.0], dtype="<f4").tobytes()))
    np.testing.assert_array_equal(loaded.parameters["w"], [[1.5], [-2.0]])


def test_extra_block_must_be_an_object():
    u32 = struct.Struct("<I").pack
    buf = b"OCRX" + u32(1) + u32(7) + b"siamese" + u32(0) + u32(0) + u32(0) + u32(3) + b"[1]"
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(buf)


@pytest.mark.parametrize("seed", range(60))
def test_corrupted_files_raise_typed_errors(checkpoint, seed):
    rng = np.random.default_rng(seed)
    buf = bytearray(encode_checkpoint(checkpoint))
    for position in rng.integers(0, len(buf), size=int(rng.integers(1, 6))):
        buf[position] = int(rng.integers(0, 256))
    if rng.integers(0, 2):
        buf = buf[:int(rng.integers(0, len(buf)))]
    try:
        loaded = decode_checkpoint(bytes(buf))
    except CheckpointFormatError:
        return
    assert loaded.kind in ("siamese", "detector", "convlstm", "autoencoder", "cgan")
