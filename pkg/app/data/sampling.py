from __future__ import annotations

import logging
import math
from collections import defaultdict
from typing import Dict, List, Sequence, Tuple

import numpy as np

from app.core.errors import DatasetError
from app.models.data import ContrastivePair, DatasetManifest
from app.storage.frames import read_frame

logger = logging.getLogger(__name__)

PairIndex = Tuple[int, int, int]


def positive_count(count: int, positive_fraction: float) -> int:
    """Round half up: count 10 at 0.5 -> 5, count 3 at 0.5 -> 2."""
    return int(math.floor(count * positive_fraction + 0.5))


def sample_pair_indices(identities: Sequence[int], rng: np.random.Generator, count: int,
                        positive_fraction: float) -> List[PairIndex]:
    """
    (i, j, label) triples over item indices, label 1 when identities match.
    Exactly positive_count(count, fraction) positives; i != j always.
    """
    if count < 0:
        raise DatasetError(f"pair count must be non-negative, got {count}")
    if not 0.0 <= positive_fraction <= 1.0:
        raise DatasetError(f"positive fraction must lie in [0, 1], got {positive_fraction}")
    groups: Dict[int, List[int]] = defaultdict(list)
    for index, identity in enumerate(identities):
        groups[identity].append(index)
    ids = sorted(groups)
    n_pos = positive_count(count, positive_fraction)
    n_neg = count - n_pos

    eligible = [i for i in ids if len(groups[i]) >= 2]
    if n_pos and not eligible:
        raise DatasetError("positive pairs requested but no identity has two or more frames")
    if n_neg and len(ids) < 2:
        raise DatasetError(f"{n_neg} negative pairs requested but only {len(ids)} identity is available")

    pairs: List[PairIndex] = []
    for _ in range(n_pos):
        members = groups[eligible[int(rng.integers(len(eligible)))]]
        a, b = rng.choice(len(members), size=2, replace=False)
        pairs.append((members[int(a)], members[int(b)], 1))
    for _ in range(n_neg):
        first, second = rng.choice(len(ids), size=2, replace=False)
        a_members, b_members = groups[ids[int(first)]], groups[ids[int(second)]]
        pairs.append((a_members[int(rng.integers(len(a_members)))], b_members[int(rng.integers(len(b_members)))], 0))
    order = rng.permutation(len(pairs))
    return [pairs[int(i)] for i in order]


def sample_frame_pairs(frames: Sequence[np.ndarray], identities: Sequence[int], rng: np.random.Generator,
                       count: int, positive_fraction: float) -> List[ContrastivePair]:
    if len(frames) != len(identities):
        raise DatasetError(f"{len(frames)} frames but {len(identities)} identity labels")
    return [
        ContrastivePair(frame_a=frames[i], frame_b=frames[j], label=label)
        for i, j, label in sample_pair_indices(identities, rng, count, positive_fraction)
    ]


def sample_pairs(manifest: DatasetManifest, rng: np.random.Generator, count: int,
                 positive_fraction: float) -> List[ContrastivePair]:
    """Contrastive pairs over the frames a manifest references."""
    identities = [r.identity_id for r in manifest.records]
    triples = sample_pair_indices(identities, rng, count, positive_fraction)
    cache: Dict[int, np.ndarray] = {}

    def frame(index: int) -> np.ndarray:
        if index not in cache:
            cache[index] = read_frame(manifest.resolve(manifest.records[index].frame_path))
        return cache[index]

    pairs = [ContrastivePair(frame_a=frame(i), frame_b=frame(j), label=label) for i, j, label in triples]
    logger.debug("Sampled %d pairs (%d positive) from %d frames", len(pairs), sum(p.label for p in pairs), len(cache))
    return pairs
