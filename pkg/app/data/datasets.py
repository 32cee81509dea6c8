"""
Turning tracks into training samples, and tracks to and from disk.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from app.core.errors import DatasetError
from app.models.data import (
    DatasetManifest,
    FrameSequence,
    LabeledFrame,
    ManifestRecord,
    ReconstructionSample,
    Split,
)
from app.storage.frames import read_frame, read_mask, write_frame, write_mask
from app.storage.manifest import write_manifest

logger = logging.getLogger(__name__)


def context_indices(n: int, length: int) -> List[int]:
    """Indices n-length+1 .. n, with positions before the track start replaced by 0."""
    if length < 1:
        raise DatasetError(f"sequence length must be at least 1, got {length}")
    return [max(0, i) for i in range(n - length + 1, n + 1)]


def context_window(frames: Sequence[np.ndarray], n: int, length: int) -> Tuple[List[np.ndarray], List[int]]:
    """Frames n-2, n-1, n (for length 3), padding at the track start by repeating the earliest frame."""
    if not 0 <= n < len(frames):
        raise DatasetError(f"frame index {n} outside a track of {len(frames)} frames")
    indices = context_indices(n, length)
    if indices[0] != n - length + 1:
        logger.debug("Padding context of frame %d by repeating frame 0", n)
    return [frames[i] for i in indices], indices


def labeled_frames(sequences: Sequence[FrameSequence]) -> List[LabeledFrame]:
    return [
        LabeledFrame(frame=frame, label=flag)
        for seq in sequences
        for frame, flag in zip(seq.frames, seq.occlusion_flags)
    ]


def reconstruction_samples(sequences: Sequence[FrameSequence], length: int = 3) -> List[ReconstructionSample]:
    """One sample per occluded frame that has a clean ground truth."""
    samples = []
    for seq in sequences:
        if not seq.clean_frames:
            continue
        for n, flag in enumerate(seq.occlusion_flags):
            if not flag:
                continue
            window, _ = context_window(seq.frames, n, length)
            samples.append(ReconstructionSample(context=window[:-1], occluded=seq.frames[n], clean=seq.clean_frames[n]))
    if not samples:
        raise DatasetError("no occluded frames with clean ground truth; reconstruction training needs both")
    return samples


def load_sequences(manifest: DatasetManifest) -> List[FrameSequence]:
    """Read every track of a validated manifest into memory."""
    sequences = []
    for records in manifest.tracks():
        frames = [read_frame(manifest.resolve(r.frame_path)) for r in records]
        flags = [r.flag for r in records]
        masks = [read_mask(manifest.resolve(r.mask_path)) if r.mask_path is not None else None for r in records]
        if any(m is not None for m in masks) and not all((m is not None) == bool(f) for m, f in zip(masks, flags)):
            masks = []
        clean: List[np.ndarray] = []
        if all(r.clean_path is not None or not r.flag for r in records):
            clean = [read_frame(manifest.resolve(r.clean_path)) if r.clean_path is not None else f
                     for r, f in zip(records, frames)]
        sequences.append(FrameSequence(
            track_id=records[0].track_id,
            identity_id=records[0].identity_id,
            frames=frames,
            occlusion_flags=flags,
            masks=masks if any(m is not None for m in masks) else [],
            clean_frames=clean,
        ))
    return sequences


def write_tracks(sequences: Sequence[FrameSequence], out_dir: Path, gallery_tracks: int = 1) -> Dict[Split, Path]:
    """
    Write frames, masks and clean frames under out_dir/frames and three
    manifests. Tracks with track_id < gallery_tracks form the gallery (clean
    frames) and the train split (occluded frames with ground truth); the
    remaining tracks form the probe split.
    """
    out_dir = Path(out_dir)
    records: Dict[Split, List[ManifestRecord]] = {split: [] for split in Split}
    for seq in sequences:
        track_dir = Path("frames") / f"id{seq.identity_id:03d}" / f"t{seq.track_id:02d}"
        is_gallery = seq.track_id < gallery_tracks
        clean_frames = seq.clean_frames or seq.frames
        for k, (frame, flag) in enumerate(zip(seq.frames, seq.occlusion_flags)):
            clean_rel = track_dir / f"clean_{k:03d}.ppm"
            write_frame(clean_frames[k], out_dir / clean_rel)
            mask_rel = occ_rel = None
            if flag:
                occ_rel = track_dir / f"occ_{k:03d}.ppm"
                write_frame(frame, out_dir / occ_rel)
                if seq.masks and seq.masks[k] is not None:
                    mask_rel = track_dir / f"mask_{k:03d}.pgm"
                    write_mask(seq.masks[k], out_dir / mask_rel)
            observed = ManifestRecord(
                identity_id=seq.identity_id, track_id=seq.track_id, split=Split.PROBE,
                frame_path=occ_rel or clean_rel, flag=flag, mask_path=mask_rel,
                clean_path=clean_rel if flag else None,
            )
            if is_gallery:
                records[Split.TRAIN].append(observed.model_copy(update={"split": Split.TRAIN}))
                records[Split.GALLERY].append(ManifestRecord(
                    identity_id=seq.identity_id, track_id=seq.track_id, split=Split.GALLERY,
                    frame_path=clean_rel, flag=0,
                ))
            else:
                records[Split.PROBE].append(observed)

    paths = {}
    for split, entries in records.items():
        if not entries:
            raise DatasetError(f"split '{split.value}' would be empty; check tracks_per_identity and gallery tracks")
        paths[split] = write_manifest(DatasetManifest(root=out_dir, records=entries), out_dir / f"{split.value}.manifest")
    logger.info("Wrote %d tracks and manifests %s to %s", len(sequences), sorted(s.value for s in paths), out_dir)
    return paths
