"""
Evaluation metrics: CMC, mean average precision and PSNR.

Rankings arrive already ordered (ties broken by gallery order), so every
value here depends only on the relevance flags and is deterministic.
"""
from __future__ import annotations

import logging
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import DatasetError, DimensionError
from app.models.data import RankingResult

logger = logging.getLogger(__name__)

INF_TEXT = "inf"
# Exact reconstructions count as this many dB when averaged.
PSNR_CAP = 100.0


def split_scoreable(results: Sequence[RankingResult]) -> Tuple[List[RankingResult], int]:
    """Queries with at least one relevant gallery entry, and how many were dropped."""
    if not results:
        raise DatasetError("no ranking results to evaluate")
    kept = [r for r in results if r.first_hit is not None]
    excluded = len(results) - len(kept)
    if excluded:
        logger.warning("%d of %d queries have no true match in the gallery and are excluded", excluded, len(results))
    if not kept:
        raise DatasetError("no query has a true match in the gallery")
    return kept, excluded


def cmc(results: Sequence[RankingResult], k_max: int) -> List[float]:
    """curve[k] = share of queries whose first relevant entry sits at rank <= k + 1."""
    if k_max < 1:
        raise DatasetError(f"k_max must be at least 1, got {k_max}")
    kept, _ = split_scoreable(results)
    hits = np.zeros(k_max, dtype=np.int64)
    for result in kept:
        if result.first_hit < k_max:
            hits[result.first_hit:] += 1
    return (hits / len(kept)).tolist()


def average_precision(relevant: Sequence[int]) -> float:
    flags = np.asarray(relevant, dtype=np.float64)
    positions = np.flatnonzero(flags)
    if positions.size == 0:
        raise DatasetError("average precision needs at least one relevant entry")
    precision_at_hits = np.cumsum(flags)[positions] / (positions + 1)
    return float(precision_at_hits.mean())


def mean_average_precision(results: Sequence[RankingResult]) -> float:
    kept, _ = split_scoreable(results)
    return float(np.mean([average_precision(r.relevant) for r in kept]))


def _mse(a: np.ndarray, b: np.ndarray, op: str, mask: Optional[np.ndarray] = None) -> float:
    if a.shape != b.shape:
        raise DimensionError(op, "shape", a.shape, b.shape)
    diff = (a.astype(np.float64) - b.astype(np.float64)) ** 2
    if mask is None:
        return float(diff.mean())
    selector = np.broadcast_to(np.asarray(mask) > 0.5, diff.shape)
    if not selector.any():
        raise DatasetError(f"{op}: mask selects no pixels")
    return float(diff[selector].mean())


def _to_db(mse: float) -> float:
    return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) for [0, 1] images; identical inputs give inf."""
    return _to_db(_mse(a, b, "psnr"))


def masked_psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """PSNR over the pixels where mask is 1 (a (1, H, W) mask covers every channel)."""
    return _to_db(_mse(a, b, "masked_psnr", mask))


def mean_psnr(values: Sequence[float]) -> float:
    """Mean PSNR with every value, inf included, clipped to PSNR_CAP."""
    if not values:
        raise DatasetError("no PSNR values to average")
    capped = [min(v, PSNR_CAP) for v in values]
    exact = sum(1 for v in values if math.isinf(v))
    if exact:
        logger.debug("%d of %d PSNR values were exact matches, averaged as %.0f dB", exact, len(values), PSNR_CAP)
    return float(np.mean(capped))


def format_value(value: float) -> str:
    return INF_TEXT if math.isinf(value) else repr(float(value))


def evaluate_rankings(results: Sequence[RankingResult], k_max: int) -> Dict[str, Any]:
    kept, excluded = split_scoreable(results)
    curve = cmc(kept, k_max)
    return {
        "cmc": curve,
        "rank1": curve[0],
        "map": mean_average_precision(kept),
        "queries": len(kept),
        "excluded": excluded,
    }


def metric_rows(report: Dict[str, Any], prefix: str = "") -> List[Tuple[str, int, float]]:
    """(metric, k, value) rows: one per CMC rank, then mAP and the query counts with k = 0."""
    rows = [(f"{prefix}cmc", k + 1, value) for k, value in enumerate(report["cmc"])]
    rows.append((f"{prefix}map", 0, report["map"]))
    rows.append((f"{prefix}queries", 0, float(report["queries"])))
    rows.append((f"{prefix}excluded", 0, float(report["excluded"])))
    return rows
