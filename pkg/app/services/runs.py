from __future__ import annotations

import csv
import datetime
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

from app.core.metrics import export_metrics
from app.core.version import version_string
from app.models.config import PipelineConfig
from app.services.metrics import format_value
from app.storage.checkpoint import file_sha256

logger = logging.getLogger(__name__)


class RunDirectory:
    """
    One run's output folder, runs/<timestamp>-<seed>/. It always holds
    config.json and run.json; metric CSVs, loss traces, summary.jsonl and
    metrics.prom are added as the run produces them.
    """

    def __init__(self, path: Path, config: PipelineConfig):
        self.path = path
        self.config = config
        self.checkpoints: Dict[str, str] = {}
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / "config.json").write_text(config.model_dump_json(indent=2), encoding="utf-8")
        self.write_run_json()

    @classmethod
    def create(cls, config: PipelineConfig, runs_dir: Optional[Path] = None,
               now: Optional[datetime.datetime] = None) -> "RunDirectory":
        parent = Path(runs_dir if runs_dir is not None else config.paths.runs_dir)
        stamp = (now or datetime.datetime.now()).strftime("%Y%m%dT%H%M%S")
        path = parent / f"{stamp}-{config.run.seed}"
        suffix = 1
        while path.exists():
            path = parent / f"{stamp}-{config.run.seed}-{suffix}"
            suffix += 1
        run = cls(path, config)
        logger.info("Run directory %s (seed %d, config %s, version %s)",
                    path, config.run.seed, config.config_hash()[:12], version_string())
        return run

    def write_run_json(self) -> Path:
        target = self.path / "run.json"
        payload = {
            "seed": self.config.run.seed,
            "version": version_string(),
            "config_hash": self.config.config_hash(),
            "checkpoints": dict(sorted(self.checkpoints.items())),
        }
        target.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        return target

    def record_checkpoint(self, path: Path, digest: Optional[str] = None) -> str:
        digest = digest or file_sha256(path)
        self.checkpoints[str(path)] = digest
        self.write_run_json()
        return digest

    def write_metric_csv(self, name: str, rows: Iterable[Tuple[str, int, float]]) -> Path:
        target = self.path / name
        with target.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["metric", "k", "value"])
            for metric, k, value in rows:
                writer.writerow([metric, k, format_value(value)])
        return target

    def append_summary(self, record: Dict[str, Any]) -> Path:
        target = self.path / "summary.jsonl"
        line = {"config_hash": self.config.config_hash(), "seed": self.config.run.seed, **record}
        with target.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(_plain(line), sort_keys=True) + "\n")
        return target

    def finish(self) -> Path:
        self.write_run_json()
        return export_metrics(self.path)


def _plain(value):
    """JSON-safe copy: infinite floats become "inf", arrays and paths become lists and strings."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if hasattr(value, "tolist"):
        return _plain(value.tolist())
    if isinstance(value, float) and not math.isfinite(value):
        return format_value(value)
    if isinstance(value, Path):
        return str(value)
    return value
