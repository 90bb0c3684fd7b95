"""Run configuration: a YAML document validated before any work starts."""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .data.synth import DEFAULT_FEATURE_DIMS, DEFAULT_MISSING, SynthSpec
from .encoders import EncoderConfig
from .errors import ConfigError
from .frameworks import Feedback, ModelSpec
from .postprocess import DEFAULT_WINDOW_GRID
from .training import Schedule


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetSection(_Section):
    manifest: Optional[str] = None
    feature_sets: Optional[list[str]] = None
    val_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    val_videos: Optional[list[str]] = None


class EncoderSection(_Section):
    kind: Literal["GRU", "LSTM", "TRM"] = "TRM"
    hidden: int = Field(1024, ge=1)
    layers: Optional[int] = Field(None, ge=1)
    heads: int = Field(4, ge=1)
    ff_dim: int = Field(1024, ge=1)
    dropout: float = Field(0.3, ge=0.0, lt=1.0)
    positional_encoding: bool = True


class FeedbackSection(_Section):
    src: list[Literal["V", "A", "EXPR", "AU"]]
    tgt: Literal["V", "A", "EXPR", "AU"]


class ModelSection(_Section):
    framework: Literal["SE", "SBE", "SBE-HSF"] = "SE"
    encoder: EncoderSection = EncoderSection()
    tasks: list[Literal["V", "A", "EXPR", "AU"]] = ["V"]
    shared_layers: Optional[int] = None
    feedback: Optional[FeedbackSection] = None
    head_hidden: list[int] = [512, 256]
    loss_weights: dict[str, float] = {}


class ScheduleSection(_Section):
    epochs: int = Field(50, ge=1)
    lr: float = Field(5e-5, gt=0.0)
    batch_size: int = Field(8, ge=1)
    segment_length: Optional[int] = Field(None, ge=1)
    checkpoint_ranges: dict[str, tuple[int, int]] = {}


class SmoothingSection(_Section):
    enabled: bool = False
    # per-task window, or "search" to pick it on the labels being evaluated
    windows: dict[Literal["V", "A"], Union[int, Literal["search"]]] = {}
    grid: list[int] = list(DEFAULT_WINDOW_GRID)
    order: Literal["before_ensemble", "after_ensemble"] = "before_ensemble"

    @field_validator("grid")
    @classmethod
    def _odd(cls, v):
        if not v or any(w < 1 or w % 2 == 0 for w in v):
            raise ValueError("smoothing grid must be a nonempty list of positive odd windows")
        return v


class EnsembleSection(_Section):
    au_strategy: Literal["vote", "average"] = "vote"
    au_thresholds: Union[Literal["fixed", "search"], list[float]] = "fixed"
    member_threshold: float = Field(0.5, gt=0.0, lt=1.0)
    frequencies: Optional[str] = None  # class frequency table; defaults to the dataset's counts


class CVSection(_Section):
    k: int = Field(6, ge=2)
    seed: int = 0
    ensemble: bool = False
    eval_manifest: Optional[str] = None  # dataset the fold models are ensembled on


class SynthSection(_Section):
    videos: int = 50
    frames: int = 200
    frames_spread: float = 0.0
    feature_dims: dict[str, int] = dict(DEFAULT_FEATURE_DIMS)
    latent_dim: int = 6
    smoothness: float = 0.95
    noise: float = 1.0
    expr_circumplex: float = 4.0
    missing: dict[str, float] = dict(DEFAULT_MISSING)


class RunConfig(_Section):
    dataset: DatasetSection = DatasetSection()
    model: ModelSection = ModelSection()
    schedule: ScheduleSection = ScheduleSection()
    smoothing: SmoothingSection = SmoothingSection()
    ensemble: EnsembleSection = EnsembleSection()
    cv: CVSection = CVSection()
    synth: SynthSection = SynthSection()
    seeds: list[int] = [0]
    out: Optional[str] = None
    threads: Optional[int] = Field(None, ge=1)

    def model_spec(self, input_dim: int) -> ModelSpec:
        m = self.model
        enc = EncoderConfig(input_dim=input_dim, **m.encoder.model_dump())
        fb = Feedback(tuple(m.feedback.src), m.feedback.tgt) if m.feedback is not None else None
        return ModelSpec(m.framework, enc, tuple(m.tasks), m.shared_layers, fb, tuple(m.head_hidden),
                         dict(m.loss_weights))

    def train_schedule(self) -> Schedule:
        s = self.schedule
        return Schedule(s.epochs, s.lr, s.batch_size, s.segment_length,
                        {t: tuple(r) for t, r in s.checkpoint_ranges.items()})

    def synth_spec(self, seed: int) -> SynthSpec:
        s = self.synth
        return SynthSpec(s.videos, s.frames, s.frames_spread, tuple(s.feature_dims.items()), s.latent_dim,
                         s.smoothness, s.noise, s.expr_circumplex, dict(s.missing), seed)

    def resolved(self) -> dict:
        """Everything except the output location, so reruns elsewhere echo identical files."""
        return self.model_dump(mode="json", exclude={"out"})

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.resolved(), sort_keys=True)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read and validate a YAML config (defaults when ``path`` is None)."""
    doc: dict = {}
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a mapping")
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {exc}") from None
