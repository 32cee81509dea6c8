"""
Dataset manifests: UTF-8 text, one frame per line, tab-separated.

    identity_id  track_id  split  frame_path  flag  [mask_path]  [clean_path]

Relative paths resolve against the manifest's directory. Blank lines and
lines starting with '#' are skipped. An empty mask column may be left
between flag and clean_path.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional, Union

from pydantic import ValidationError

from app.core.errors import ManifestError
from app.models.data import DatasetManifest, ManifestRecord, Split

logger = logging.getLogger(__name__)

MIN_COLUMNS = 5
MAX_COLUMNS = 7


def parse_manifest_line(line: str, line_no: int, source: str) -> ManifestRecord:
    fields = line.rstrip("\r\n").split("\t")
    if not MIN_COLUMNS <= len(fields) <= MAX_COLUMNS:
        raise ManifestError(f"{source}:{line_no}: expected {MIN_COLUMNS}-{MAX_COLUMNS} tab-separated fields, got {len(fields)}")
    identity, track, split, frame, flag = fields[:5]
    mask = fields[5] if len(fields) > 5 and fields[5] else None
    clean = fields[6] if len(fields) > 6 and fields[6] else None
    try:
        return ManifestRecord(
            identity_id=int(identity),
            track_id=int(track),
            split=Split(split),
            frame_path=Path(frame),
            flag=int(flag),
            mask_path=Path(mask) if mask else None,
            clean_path=Path(clean) if clean else None,
        )
    except (ValueError, ValidationError) as exc:
        raise ManifestError(f"{source}:{line_no}: {exc}") from exc


def format_manifest_line(record: ManifestRecord) -> str:
    fields = [
        str(record.identity_id),
        str(record.track_id),
        record.split.value,
        record.frame_path.as_posix(),
        str(record.flag),
    ]
    if record.mask_path is not None or record.clean_path is not None:
        fields.append(record.mask_path.as_posix() if record.mask_path is not None else "")
    if record.clean_path is not None:
        fields.append(record.clean_path.as_posix())
    return "\t".join(fields)


def validate_manifest(manifest: DatasetManifest, check_files: bool = True) -> DatasetManifest:
    """
    Checks that every referenced file exists, masks only accompany occluded
    frames, and identity ids are exactly 0..K-1.
    """
    if not manifest.records:
        raise ManifestError(f"manifest under {manifest.root} has no records")
    for index, record in enumerate(manifest.records):
        if record.mask_path is not None and record.flag != 1:
            raise ManifestError(f"record {index}: mask given for a frame flagged unoccluded")
        if check_files:
            for path in (record.frame_path, record.mask_path, record.clean_path):
                if path is not None and not manifest.resolve(path).is_file():
                    raise ManifestError(f"record {index}: missing file {manifest.resolve(path)}")
    ids = manifest.identities
    if ids != list(range(len(ids))):
        raise ManifestError(f"identity ids must be contiguous from 0, got {ids[:10]}")
    return manifest


def read_manifest(path: Union[str, Path], root: Optional[Path] = None, validate: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    records: List[ManifestRecord] = []
    with path.open("rb") as handle:
        for line_no, raw in enumerate(handle, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ManifestError(f"{path}:{line_no}: not valid UTF-8 at byte {exc.start} of the line") from exc
            if not line.strip() or line.startswith("#"):
                continue
            records.append(parse_manifest_line(line, line_no, str(path)))
    manifest = DatasetManifest(root=root if root is not None else path.parent, records=records)
    if validate:
        validate_manifest(manifest)
    logger.info("Loaded manifest %s: %d frames, %d identities", path, len(records), len(manifest.identities))
    return manifest


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [format_manifest_line(r) for r in manifest.records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
