from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Split(str, Enum):
    TRAIN = "train"
    GALLERY = "gallery"
    PROBE = "probe"


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)


def _check_frame(frame: np.ndarray) -> np.ndarray:
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ValueError(f"frames are (3, H, W) arrays, got shape {frame.shape}")
    if frame.size and (frame.min() < 0.0 or frame.max() > 1.0):
        raise ValueError("frame values must lie in [0, 1]")
    return frame


class LabeledFrame(_ArrayModel):
    """
    One detector training sample.

    Attributes:
        frame: (3, H, W) float32 in [0, 1].
        label: 1 = occluded, 0 = un-occluded.
    """
    frame: np.ndarray = Field(..., description="RGB frame, (3, H, W), values in [0, 1]")
    label: int = Field(..., ge=0, le=1, description="1 = occluded")

    @field_validator("frame")
    @classmethod
    def _frame_range(cls, frame: np.ndarray) -> np.ndarray:
        return _check_frame(frame)


class FrameSequence(_ArrayModel):
    """
    One track: ordered frames of a single identity with per-frame occlusion
    flags, optional masks, and (for synthetic data) the clean frames.
    """
    track_id: int = Field(..., ge=0)
    identity_id: int = Field(..., ge=0)
    frames: List[np.ndarray] = Field(..., description="(3, H, W) frames, oldest first")
    occlusion_flags: List[int] = Field(..., description="1 where the frame is occluded")
    masks: List[Optional[np.ndarray]] = Field(default_factory=list, description="(1, H, W) {0,1} masks, None for clean frames")
    clean_frames: List[np.ndarray] = Field(default_factory=list, description="Ground truth without occluders")

    @model_validator(mode="after")
    def _aligned(self):
        n = len(self.frames)
        if len(self.occlusion_flags) != n:
            raise ValueError(f"{len(self.occlusion_flags)} occlusion flags for {n} frames")
        if any(f not in (0, 1) for f in self.occlusion_flags):
            raise ValueError("occlusion flags must be 0 or 1")
        if self.masks and len(self.masks) != n:
            raise ValueError(f"{len(self.masks)} masks for {n} frames")
        if self.masks:
            for flag, mask in zip(self.occlusion_flags, self.masks):
                if (mask is not None) != bool(flag):
                    raise ValueError("a mask must be present exactly for occluded frames")
        if self.clean_frames and len(self.clean_frames) != n:
            raise ValueError(f"{len(self.clean_frames)} clean frames for {n} frames")
        for frame in self.frames:
            _check_frame(frame)
        return self

    def __len__(self) -> int:
        return len(self.frames)


class ReconstructionSample(_ArrayModel):
    """Context frames (oldest first), the occluded frame n and its clean target."""
    context: List[np.ndarray]
    occluded: np.ndarray
    clean: np.ndarray


class RefinePair(_ArrayModel):
    """cGAN training pair: a coarse reconstruction (the condition) and the clean target."""
    coarse: np.ndarray
    target: np.ndarray

    @model_validator(mode="after")
    def _same_shape(self):
        if self.coarse.shape != self.target.shape:
            raise ValueError(f"coarse {self.coarse.shape} and target {self.target.shape} differ in shape")
        _check_frame(self.coarse)
        _check_frame(self.target)
        return self


class ContrastivePair(_ArrayModel):
    frame_a: np.ndarray
    frame_b: np.ndarray
    label: int = Field(..., ge=0, le=1, description="1 = same identity")


class RankingResult(BaseModel):
    """Gallery ordered by descending score for one query."""
    query_id: str
    gallery_ids: List[str]
    scores: List[float]
    relevant: List[int]

    @model_validator(mode="after")
    def _consistent(self):
        n = len(self.gallery_ids)
        if n == 0:
            raise ValueError("a ranking needs at least one gallery entry")
        if len(self.scores) != n or len(self.relevant) != n:
            raise ValueError("gallery ids, scores and relevance flags differ in length")
        if any(r not in (0, 1) for r in self.relevant):
            raise ValueError("relevance flags must be 0 or 1")
        if any(a < b for a, b in zip(self.scores, self.scores[1:])):
            raise ValueError("scores must be non-increasing")
        return self

    @property
    def first_hit(self) -> Optional[int]:
        """0-based rank of the first relevant entry, None if there is none."""
        for rank, flag in enumerate(self.relevant):
            if flag:
                return rank
        return None


class ManifestRecord(BaseModel):
    identity_id: int = Field(..., ge=0)
    track_id: int = Field(..., ge=0)
    split: Split
    frame_path: Path
    flag: int = Field(..., ge=0, le=1)
    mask_path: Optional[Path] = None
    clean_path: Optional[Path] = None


class DatasetManifest(BaseModel):
    root: Path
    records: List[ManifestRecord]

    def split(self, split: Split) -> "DatasetManifest":
        return DatasetManifest(root=self.root, records=[r for r in self.records if r.split == split])

    def resolve(self, path: Path) -> Path:
        return path if path.is_absolute() else self.root / path

    def tracks(self) -> List[List[ManifestRecord]]:
        """Records grouped by (identity, track) in first-appearance order."""
        groups: dict = {}
        for record in self.records:
            groups.setdefault((record.identity_id, record.track_id, record.split), []).append(record)
        return list(groups.values())

    @property
    def identities(self) -> List[int]:
        return sorted({r.identity_id for r in self.records})


class RoutingEntry(BaseModel):
    frame_index: int
    score: float = Field(..., description="Detector p(occluded)")
    decision: str = Field(..., description="occluded or unoccluded")
    stages: List[str] = Field(default_factory=list, description="Models applied, in order")
    context: List[int] = Field(default_factory=list, description="Input frame indices consumed by the Conv-LSTM")
