from __future__ import annotations

import hashlib
from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict, TomlConfigSettingsSource

from app.core.errors import ConfigurationError
from app.networks.convlstm import DESK_WIDTHS, FULL_SCALE_WIDTHS, TABLE_KERNELS


class Mode(str, Enum):
    """
    Reconstruction path: tracks of frames use the Conv-LSTM,
    isolated frames use the autoencoder.
    """
    SEQUENTIAL = "sequential"
    NON_SEQUENTIAL = "non_sequential"


class RunSection(BaseModel):
    seed: int = Field(0, ge=0, lt=2 ** 64, description="64-bit run seed; every random stream derives from it")
    mode: Mode = Field(Mode.SEQUENTIAL, description="Reconstruction path used by reconstruct")
    frame_size: int = Field(64, gt=0, description="Square frame side shared by all models")
    log_every: int = Field(10, gt=0, description="Log one training line every N epochs")


class PathsSection(BaseModel):
    train_manifest: Optional[Path] = Field(None, description="Manifest with split=train records")
    gallery_manifest: Optional[Path] = Field(None, description="Manifest with split=gallery records")
    probe_manifest: Optional[Path] = Field(None, description="Manifest with split=probe records")
    checkpoint_dir: Path = Field(Path("checkpoints"), description="Where train-* commands write checkpoints")
    runs_dir: Path = Field(Path("runs"), description="Parent of every run directory")


class SynthSection(BaseModel):
    identities: int = Field(10, ge=1, description="Number of synthetic identities")
    tracks_per_identity: int = Field(2, ge=1, description="Tracks generated per identity")
    track_length: int = Field(8, ge=1, description="Frames per track")
    occluded_fraction: float = Field(0.4, ge=0.0, le=1.0, description="Share of frames given a synthetic occluder")
    max_velocity: int = Field(2, ge=0, description="Largest per-frame sprite speed in pixels")
    jitter: int = Field(1, ge=0, description="Bound on the per-frame displacement jitter in pixels")
    sprite_min: float = Field(0.35, gt=0.0, le=1.0, description="Smallest sprite side as a fraction of the frame")
    sprite_max: float = Field(0.6, gt=0.0, le=1.0, description="Largest sprite side as a fraction of the frame")

    @model_validator(mode="after")
    def _sprite_range(self):
        if self.sprite_min > self.sprite_max:
            raise ValueError("synth.sprite_min must not exceed synth.sprite_max")
        return self


class OccluderSection(BaseModel):
    family: Literal["rectangle", "vertical_bar"] = Field("rectangle", description="Occluder shape")
    area_min: float = Field(0.2, description="Smallest occluded share of the frame area")
    area_max: float = Field(0.5, description="Largest occluded share of the frame area")
    fill: Literal["solid", "noise"] = Field("solid", description="Solid random colour or uniform noise")

    @model_validator(mode="after")
    def _area_range(self):
        if not (0.0 <= self.area_min <= self.area_max <= 1.0):
            raise ValueError(f"occluder area range must satisfy 0 <= min <= max <= 1, got [{self.area_min}, {self.area_max}]")
        return self


class DetectorSection(BaseModel):
    widths: List[int] = Field([16, 32, 64, 128], min_length=1, description="Residual block widths")
    threshold: float = Field(0.5, gt=0.0, lt=1.0, description="p(occluded) >= threshold routes to reconstruction")
    epochs: int = Field(200, ge=1)
    batch_size: int = Field(16, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)


class ConvLstmSection(BaseModel):
    widths: List[int] = Field(list(DESK_WIDTHS), min_length=1, description="Hidden channels per layer")
    kernels: List[int] = Field(list(TABLE_KERNELS), min_length=1, description="Kernel size per layer")
    sequence_length: int = Field(3, ge=1, description="Frames n-2, n-1, n")
    epochs: int = Field(300, ge=1)
    batch_size: int = Field(8, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    paper_epochs: int = Field(800, ge=1)
    paper_batch_size: int = Field(64, ge=1)
    paper_widths: List[int] = Field(list(FULL_SCALE_WIDTHS))

    @field_validator("kernels")
    @classmethod
    def _odd_kernels(cls, kernels):
        if any(k % 2 == 0 for k in kernels):
            raise ValueError("Conv-LSTM kernels must be odd for 'same' padding")
        return kernels

    @model_validator(mode="after")
    def _aligned(self):
        if len(self.widths) != len(self.kernels):
            raise ValueError(f"convlstm has {len(self.widths)} widths but {len(self.kernels)} kernels")
        return self


class AutoencoderSection(BaseModel):
    widths: List[int] = Field([16, 32, 64], min_length=1, description="Encoder widths; each halves the resolution")
    epochs: int = Field(300, ge=1)
    batch_size: int = Field(8, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    paper_epochs: int = Field(1000, ge=1)


class CganSection(BaseModel):
    unet_depth: int = Field(3, ge=1)
    unet_base: int = Field(16, ge=1)
    disc_layers: int = Field(3, ge=1)
    disc_base: int = Field(16, ge=1)
    lambda_l1: float = Field(100.0, gt=0.0, description="Weight of the L1 term in the generator loss")
    epochs: int = Field(400, ge=1)
    learning_rate: float = Field(2e-4, gt=0.0)
    beta1: float = Field(0.5, gt=0.0, lt=1.0)
    max_pairs: int = Field(64, ge=1, description="Cap on refinement pairs per training run")
    sessions: int = Field(1, ge=1, description="Checkpointed sessions the epochs are split into")
    paper_epochs: int = Field(3000, ge=1)
    paper_sessions: int = Field(3, ge=1)


class SiameseSection(BaseModel):
    widths: List[int] = Field([16, 32, 64, 128, 256, 256], min_length=1)
    embedding_dim: int = Field(64, ge=1)
    head_hidden: int = Field(32, ge=1)
    margin: float = Field(1.0, gt=0.0)
    epochs: int = Field(60, ge=1)
    batch_size: int = Field(16, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    pair_count: int = Field(256, ge=1)
    positive_fraction: float = Field(0.5, ge=0.0, le=1.0)


class BenchmarkSection(BaseModel):
    k_max: int = Field(5, ge=1, description="Longest CMC rank reported")
    gallery_tracks_per_identity: int = Field(1, ge=1)


class PipelineConfig(BaseSettings):
    """
    Complete experiment configuration. Loaded from a TOML file with one
    [section] per field below; unknown keys are rejected.
    """
    model_config = SettingsConfigDict(env_prefix="OCCREID_CFG_", env_nested_delimiter="__", extra="forbid")

    run: RunSection = Field(default_factory=RunSection)
    paths: PathsSection = Field(default_factory=PathsSection)
    synth: SynthSection = Field(default_factory=SynthSection)
    occluder: OccluderSection = Field(default_factory=OccluderSection)
    detector: DetectorSection = Field(default_factory=DetectorSection)
    convlstm: ConvLstmSection = Field(default_factory=ConvLstmSection)
    autoencoder: AutoencoderSection = Field(default_factory=AutoencoderSection)
    cgan: CganSection = Field(default_factory=CganSection)
    siamese: SiameseSection = Field(default_factory=SiameseSection)
    benchmark: BenchmarkSection = Field(default_factory=BenchmarkSection)

    @model_validator(mode="after")
    def _frame_size_fits_models(self):
        size = self.run.frame_size
        unet = 2 ** self.cgan.unet_depth
        if size % unet:
            raise ValueError(f"frame_size {size} is not divisible by 2**cgan.unet_depth = {unet}")
        auto = 2 ** len(self.autoencoder.widths)
        if size % auto:
            raise ValueError(f"frame_size {size} is not divisible by {auto} (autoencoder downsampling)")
        return self

    def config_hash(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()

    def paper_scale(self) -> "PipelineConfig":
        """Copy with the published training schedule and Conv-LSTM widths applied."""
        data = self.model_dump()
        data["detector"]["learning_rate"] = 1e-3
        kernels = list(self.convlstm.kernels)
        if len(kernels) != len(self.convlstm.paper_widths):
            kernels = list(TABLE_KERNELS)
        data["convlstm"].update(widths=list(self.convlstm.paper_widths), kernels=kernels,
                                epochs=self.convlstm.paper_epochs, batch_size=self.convlstm.paper_batch_size)
        data["autoencoder"]["epochs"] = self.autoencoder.paper_epochs
        data["cgan"].update(epochs=self.cgan.paper_epochs, sessions=self.cgan.paper_sessions, lambda_l1=100.0)
        return build_pipeline_config(data)


def build_pipeline_config(data: dict) -> PipelineConfig:
    try:
        return PipelineConfig(**data)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from exc


def load_pipeline_config(path: Optional[Path] = None, seed: Optional[int] = None) -> PipelineConfig:
    """
    Read and validate an experiment file. File values take precedence over
    OCCREID_CFG_* environment values, which take precedence over defaults.
    """
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            data = TomlConfigSettingsSource(PipelineConfig, toml_file=path)()
        except ValueError as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    if seed is not None:
        data.setdefault("run", {})
        data["run"] = {**data["run"], "seed": seed}
    return build_pipeline_config(data)
