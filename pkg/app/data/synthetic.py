"""
Synthetic identities, tracks and occluders.

An identity is a patterned coloured sprite (hue, pattern and size drawn once
from the stream "synth/identity/<id>"). A track moves that sprite across a
textured background at an integer velocity plus per-step jitter, drawn from
"synth/track/<id>/<track>". Frames are snapped to the 8-bit grid so they
survive a PPM round trip unchanged.
"""
from __future__ import annotations

import colorsys
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from app.core.errors import ConfigurationError
from app.core.rng import RngStreams
from app.models.config import OccluderSection, PipelineConfig, SynthSection
from app.models.data import FrameSequence
from app.storage.frames import dequantize, quantize

logger = logging.getLogger(__name__)

PATTERNS = ("solid", "stripes_h", "stripes_v", "checker")
GOLDEN = 0.6180339887498949


def snap(values: np.ndarray) -> np.ndarray:
    """Round to the nearest k/255 so the array is exactly representable in a PPM."""
    return dequantize(quantize(values))


@dataclass(frozen=True)
class SpriteAppearance:
    color: np.ndarray
    accent: np.ndarray
    pattern: str
    period: int
    height: int
    width: int

    def render(self) -> np.ndarray:
        rows = np.arange(self.height)[:, None]
        cols = np.arange(self.width)[None, :]
        if self.pattern == "stripes_h":
            use_accent = (rows // self.period) % 2 == 1
        elif self.pattern == "stripes_v":
            use_accent = (cols // self.period) % 2 == 1
        elif self.pattern == "checker":
            use_accent = ((rows // self.period) + (cols // self.period)) % 2 == 1
        else:
            use_accent = np.zeros((self.height, self.width), dtype=bool)
        use_accent = np.broadcast_to(use_accent, (self.height, self.width))
        sprite = np.where(use_accent[None], self.accent[:, None, None], self.color[:, None, None])
        return sprite.astype(np.float32)


def identity_appearance(streams: RngStreams, identity_id: int, synth: SynthSection, frame_size: int) -> SpriteAppearance:
    rng = streams.stream(f"synth/identity/{identity_id}")
    # golden-ratio spacing keeps hues of consecutive identities far apart
    hue = (identity_id * GOLDEN + rng.uniform(0.0, 0.05)) % 1.0
    saturation = rng.uniform(0.75, 1.0)
    value = rng.uniform(0.8, 1.0)
    color = np.array(colorsys.hsv_to_rgb(hue, saturation, value), dtype=np.float64)
    accent = color * rng.uniform(0.35, 0.55)
    lo = max(1, int(round(synth.sprite_min * frame_size)))
    hi = max(lo, int(round(synth.sprite_max * frame_size)))
    return SpriteAppearance(
        color=snap(color),
        accent=snap(accent),
        pattern=PATTERNS[identity_id % len(PATTERNS)],
        period=int(rng.integers(2, 5)),
        height=int(rng.integers(lo, hi + 1)),
        width=int(rng.integers(max(1, lo // 2), max(1, lo // 2) + (hi - lo) // 2 + 1)),
    )


def textured_background(rng: np.random.Generator, frame_size: int) -> np.ndarray:
    """Dark grey base plus a blocky low-frequency texture."""
    cells = 4 if frame_size % 4 == 0 else 1
    block = frame_size // cells
    base = rng.uniform(0.1, 0.3)
    coarse = rng.uniform(-0.08, 0.08, size=(3, cells, cells))
    texture = np.repeat(np.repeat(coarse, block, axis=1), block, axis=2)
    fine = rng.uniform(-0.02, 0.02, size=(3, frame_size, frame_size))
    return np.clip(base + texture + fine, 0.0, 1.0)


def trajectory(rng: np.random.Generator, length: int, sprite_hw: Tuple[int, int], frame_size: int,
               max_velocity: int, jitter: int) -> np.ndarray:
    """
    Top-left sprite positions (length, 2). Step t -> t+1 moves by
    velocity + jitter_t with jitter_t in [-jitter, jitter] per axis. The whole
    path is shifted so it stays inside the frame; a path too long to fit is
    clipped at the border.
    """
    velocity = rng.integers(-max_velocity, max_velocity + 1, size=2)
    steps = velocity[None, :] + rng.integers(-jitter, jitter + 1, size=(max(length - 1, 0), 2))
    relative = np.vstack([np.zeros((1, 2), dtype=np.int64), np.cumsum(steps, axis=0)]).astype(np.int64)
    limits = np.array([frame_size - sprite_hw[0], frame_size - sprite_hw[1]])
    low = -relative.min(axis=0)
    high = limits - relative.max(axis=0)
    start = np.empty(2, dtype=np.int64)
    for axis in range(2):
        if low[axis] <= high[axis]:
            start[axis] = rng.integers(low[axis], high[axis] + 1)
        else:
            logger.warning("Sprite path spans %d px on axis %d, more than the %d px available; clipping",
                           int(np.ptp(relative[:, axis])), axis, int(limits[axis]))
            start[axis] = low[axis]
    return np.clip(relative + start, 0, limits)


def synth_sequence(streams: RngStreams, config: PipelineConfig, identity_id: int, track_id: int) -> FrameSequence:
    """Clean track of one identity; deterministic per (seed, identity, track)."""
    synth = config.synth
    size = config.run.frame_size
    appearance = identity_appearance(streams, identity_id, synth, size)
    rng = streams.stream(f"synth/track/{identity_id}/{track_id}")
    background = textured_background(rng, size)
    sprite = appearance.render()
    positions = trajectory(rng, synth.track_length, (appearance.height, appearance.width), size,
                           synth.max_velocity, synth.jitter)
    frames = []
    for top, left in positions:
        frame = background.copy()
        frame[:, top:top + appearance.height, left:left + appearance.width] = sprite
        frames.append(snap(frame))
    return FrameSequence(
        track_id=track_id,
        identity_id=identity_id,
        frames=frames,
        occlusion_flags=[0] * len(frames),
        masks=[None] * len(frames),
        clean_frames=[f.copy() for f in frames],
    )


def _rectangle_size(rng: np.random.Generator, height: int, width: int, area_min: float, area_max: float) -> Tuple[int, int]:
    area = height * width
    h_low = max(1, math.ceil(area_min * area / width))
    for _ in range(64):
        h = int(rng.integers(h_low, height + 1))
        w_low = max(1, math.ceil(area_min * area / h))
        w_high = min(width, math.floor(area_max * area / h))
        if w_low <= w_high:
            return h, int(rng.integers(w_low, w_high + 1))
    # the range is narrower than one pixel row; take the closest feasible width
    h = int(rng.integers(h_low, height + 1))
    target = 0.5 * (area_min + area_max) * area
    return h, int(min(width, max(1, round(target / h))))


def synth_occlude(frame: np.ndarray, rng: np.random.Generator,
                  occluder: OccluderSection) -> Tuple[np.ndarray, np.ndarray]:
    """
    Paint one occluder on a (3, H, W) frame. Returns the occluded frame and a
    (1, H, W) {0, 1} mask; pixels outside the mask are left untouched.
    """
    lo, hi = occluder.area_min, occluder.area_max
    if not (0.0 <= lo <= hi <= 1.0):
        raise ConfigurationError(f"occluder area range must satisfy 0 <= min <= max <= 1, got [{lo}, {hi}]")
    _, height, width = frame.shape
    out = frame.copy()
    mask = np.zeros((1, height, width), dtype=np.float32)
    if hi == 0.0:
        return out, mask

    if occluder.family == "vertical_bar":
        h = height
        w_low = max(1, math.ceil(lo * width))
        w_high = max(w_low, min(width, math.floor(hi * width)))
        w = int(rng.integers(w_low, w_high + 1))
    else:
        h, w = _rectangle_size(rng, height, width, lo, hi)
    top = int(rng.integers(0, height - h + 1))
    left = int(rng.integers(0, width - w + 1))

    if occluder.fill == "noise":
        patch = snap(rng.uniform(0.0, 1.0, size=(3, h, w)))
    else:
        patch = np.broadcast_to(snap(rng.uniform(0.0, 1.0, size=3))[:, None, None], (3, h, w))
    out[:, top:top + h, left:left + w] = patch
    mask[:, top:top + h, left:left + w] = 1.0
    return out, mask


def occlusion_count(length: int, fraction: float) -> int:
    return int(math.floor(length * fraction + 0.5))


def occlude_sequence(sequence: FrameSequence, streams: RngStreams, occluder: OccluderSection,
                     fraction: float, stream_name: Optional[str] = None) -> FrameSequence:
    """Occlude round-half-up(fraction * length) frames chosen at random; clean frames are kept."""
    name = stream_name or f"synth/occlusion/{sequence.identity_id}/{sequence.track_id}"
    rng = streams.stream(name)
    n = len(sequence)
    chosen = set(rng.choice(n, size=occlusion_count(n, fraction), replace=False).tolist()) if n else set()
    frames, flags, masks = [], [], []
    clean = sequence.clean_frames or sequence.frames
    for index, frame in enumerate(clean):
        if index in chosen:
            occluded, mask = synth_occlude(frame, rng, occluder)
            frames.append(occluded)
            flags.append(1)
            masks.append(mask)
        else:
            frames.append(frame.copy())
            flags.append(0)
            masks.append(None)
    return FrameSequence(
        track_id=sequence.track_id,
        identity_id=sequence.identity_id,
        frames=frames,
        occlusion_flags=flags,
        masks=masks,
        clean_frames=[f.copy() for f in clean],
    )


def build_synthetic_tracks(config: PipelineConfig, streams: Optional[RngStreams] = None,
                           occlude: bool = True) -> List[FrameSequence]:
    """Every (identity, track) of the synth section, optionally with occluders applied."""
    streams = streams or RngStreams(config.run.seed)
    tracks = []
    for identity_id in range(config.synth.identities):
        for track_id in range(config.synth.tracks_per_identity):
            sequence = synth_sequence(streams, config, identity_id, track_id)
            if occlude:
                sequence = occlude_sequence(sequence, streams, config.occluder, config.synth.occluded_fraction)
            tracks.append(sequence)
    logger.info("Generated %d synthetic tracks (%d identities x %d tracks, %d frames each)",
                len(tracks), config.synth.identities, config.synth.tracks_per_identity, config.synth.track_length)
    return tracks
