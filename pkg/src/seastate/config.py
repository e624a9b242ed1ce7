"""Run configuration: one INI-style file with sections, flags layered on top."""
from __future__ import annotations

import configparser
import io
import math
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from .augment import AugmentConfig
from .errors import ConfigError
from .train import Stage1Config, Stage2Config, TrainConfig


def _split_csv(value):
    if isinstance(value, str):
        value = value.strip()
        if not value:
            return None
        return tuple(v.strip() for v in value.split(","))
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    @field_validator("*", mode="before")
    @classmethod
    def _blank_is_none(cls, value):
        if isinstance(value, str) and not value.strip():
            return None
        return value


class DatasetSection(_Section):
    name: str = "dataset"
    sessions: Optional[str] = None
    manifest: Optional[str] = None
    strategy: str = "LL"
    seed: int = 0
    train_target: int = 750
    val_target: int = 300
    test_target: int = 300
    holdout: str = "trailing"
    ll_offset: tuple[int, int] = (0, 0)
    sea_region: Optional[tuple[int, int, int, int]] = None
    workers: int = 1
    synth_classes: int = 8
    synth_train: int = 300
    synth_val: int = 50
    synth_test: int = 100
    synth_size: int = 331
    synth_difficulty: float = 1.0

    _csv = field_validator("ll_offset", "sea_region", mode="before")(lambda v: _split_csv(v))

    @field_validator("strategy")
    @classmethod
    def _strategy(cls, v):
        if v not in ("LL", "R"):
            raise ValueError("strategy must be LL or R")
        return v

    @field_validator("holdout")
    @classmethod
    def _holdout(cls, v):
        if v not in ("trailing", "session"):
            raise ValueError("holdout must be 'trailing' or 'session'")
        return v


class ModelSection(_Section):
    architecture: str = "surrogate"
    num_classes: Optional[int] = None
    assets: Optional[str] = None
    vit_head_width: int = 512


class TrainingSection(_Section):
    stage1_optimizer: str = "adam"
    stage1_lr: float = 1e-4
    stage1_epochs: int = 30
    stage2_optimizer: str = "rmsprop"
    stage2_lr: float = 1e-4
    plateau_factor: float = 5.0
    min_lr: float = 1e-6
    patience: int = 30
    improvement_threshold: float = 1e-6
    monitor: str = "val_accuracy"
    stage2_epochs: Optional[int] = None
    batch_size: Optional[int] = None
    seed: int = 0
    checkpoint: str = "best"
    workers: int = 0


class AugmentSection(_Section):
    crop_out: int = 224
    motion_blur_prob: float = 0.5
    blur_kernel_size: int = 7
    flip_prob: float = 0.5
    brightness_delta_range: tuple[float, float] = (-0.2, 0.2)
    brightness_mode: str = "additive"
    contrast_range: tuple[float, float] = (0.5, 1.5)
    rotation_range: tuple[float, float] = (-0.2 * math.pi, 0.2 * math.pi)
    grayscale_prob: float = 0.2
    preview_count: int = 8

    _csv = field_validator("brightness_delta_range", "contrast_range", "rotation_range", mode="before")(
        lambda v: _split_csv(v))


class EvaluationSection(_Section):
    split: str = "test"
    bundle: Optional[str] = None
    home: Optional[str] = None
    foreign: Optional[str] = None
    foreign_label_range: Optional[tuple[int, int]] = None

    _csv = field_validator("foreign_label_range", mode="before")(lambda v: _split_csv(v))


class AblationSection(_Section):
    sizes: tuple[int, ...] = (10, 20, 40, 80, 160, 375, 750)

    _csv = field_validator("sizes", mode="before")(lambda v: _split_csv(v))


class ProfilingSection(_Section):
    bundles: Optional[tuple[str, ...]] = None
    runs: Optional[tuple[str, ...]] = None
    batch_size: int = 32
    num_batches: int = 20
    warmup_batches: int = 3

    _csv = field_validator("bundles", "runs", mode="before")(lambda v: _split_csv(v))


class OutputSection(_Section):
    dir: str = "runs/default"


class RunConfig(_Section):
    dataset: DatasetSection = DatasetSection()
    model: ModelSection = ModelSection()
    training: TrainingSection = TrainingSection()
    augment: AugmentSection = AugmentSection()
    evaluation: EvaluationSection = EvaluationSection()
    ablation: AblationSection = AblationSection()
    profiling: ProfilingSection = ProfilingSection()
    output: OutputSection = OutputSection()

    def train_config(self) -> TrainConfig:
        t = self.training
        a = self.augment
        return TrainConfig(
            stage1=Stage1Config(optimizer=t.stage1_optimizer, lr=t.stage1_lr, epochs=t.stage1_epochs),
            stage2=Stage2Config(optimizer=t.stage2_optimizer, base_lr=t.stage2_lr, plateau_factor=t.plateau_factor,
                                min_lr=t.min_lr, patience=t.patience,
                                improvement_threshold=t.improvement_threshold, epochs=t.stage2_epochs,
                                monitor=t.monitor),
            batch_size=t.batch_size,
            seed=t.seed,
            augment=AugmentConfig(**a.model_dump(exclude={"preview_count"}), seed=t.seed),
            checkpoint=t.checkpoint,
            workers=t.workers,
        )


SECTIONS = tuple(RunConfig.model_fields)


def _format_value(value: Any) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(data: dict) -> RunConfig:
    """Validate a ``{section: {key: value}}`` mapping, naming the first bad key."""
    unknown = [s for s in data if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown config section [{unknown[0]}]")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        key = ".".join(str(p) for p in err["loc"])
        raise ConfigError(f"invalid config key {key}: {err['msg']}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def loads_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return parse_config({s: dict(parser[s]) for s in parser.sections()})


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return loads_config(path.read_text(encoding="utf-8"))


def dumps_config(config: RunConfig) -> str:
    """Every field, defaults included, so the snapshot alone reproduces a run."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section in SECTIONS:
        values = getattr(config, section).model_dump()
        parser[section] = {k: _format_value(v) for k, v in values.items() if v is not None}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def merge(config: RunConfig, overrides: dict) -> RunConfig:
    """Layer ``{section: {key: value}}`` overrides (``None`` values ignored) on ``config``."""
    data = config.model_dump()
    for section, values in overrides.items():
        for key, value in values.items():
            if value is not None:
                data.setdefault(section, {})[key] = value
    return parse_config(data)
