from pathlib import Path

from prometheus_client import REGISTRY, Counter, Gauge, Histogram, write_to_textfile

# Epochs completed per model
TRAINING_EPOCHS = Counter(
    "occreid_training_epochs_total",
    "Training epochs completed",
    ["model"]
)

# Last mean epoch loss
EPOCH_LOSS = Gauge(
    "occreid_epoch_loss",
    "Mean loss of the most recent epoch",
    ["model"]
)

# Wall time per epoch
EPOCH_DURATION = Histogram(
    "occreid_epoch_duration_seconds",
    "Training epoch duration in seconds",
    ["model"]
)

# Detector routing outcomes
ROUTING_DECISIONS = Counter(
    "occreid_routing_decisions_total",
    "Frames routed by the occlusion detector",
    ["mode", "decision"]
)

# Inference latency per pipeline stage
STAGE_DURATION = Histogram(
    "occreid_stage_duration_seconds",
    "Per-frame duration of a pipeline stage in seconds",
    ["stage"]
)


def export_metrics(run_dir: Path) -> Path:
    """Write the current collector values as a Prometheus text file into the run directory."""
    target = Path(run_dir) / "metrics.prom"
    write_to_textfile(str(target), REGISTRY)
    return target
