"""Two-stage transfer learning and the training-set-size ablation.

Stage 1 trains only the new head with Adam at a fixed learning rate. Stage 2
releases the top of the backbone (see :func:`models.configure_stage`) and
trains with RMSProp under a reduce-on-plateau schedule that watches
validation accuracy.
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .augment import AugmentConfig
from .dataset import DatasetManifest, SPLITS, manifest_hash, write_manifest
from .errors import ConfigError, DataError, DivergenceError
from .loader import SplitImages, eval_crops
from .models import (ArchitectureSpec, ClassifierModel, PretrainedAssets, build_classifier, configure_stage,
                     count_params, export_bundle, to_tensor)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Stage1Config:
    optimizer: str = "adam"
    lr: float = 1e-4
    epochs: int = 30
    loss: str = "categorical_crossentropy"


@dataclass(frozen=True)
class Stage2Config:
    optimizer: str = "rmsprop"
    base_lr: float = 1e-4
    plateau_factor: float = 5.0
    min_lr: float = 1e-6
    patience: int = 30
    improvement_threshold: float = 1e-6
    epochs: int | None = None
    loss: str = "categorical_crossentropy"
    monitor: str = "val_accuracy"

    def __post_init__(self):
        if self.min_lr > self.base_lr:
            raise ConfigError("min_lr must not exceed base_lr")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.plateau_factor <= 1:
            raise ConfigError("plateau_factor must exceed 1")
        if self.epochs is not None and self.epochs < 0:
            raise ConfigError("stage-2 epochs must be >= 0")
        if self.monitor not in ("val_accuracy", "val_loss"):
            raise ConfigError(f"unknown monitor {self.monitor!r}")


@dataclass(frozen=True)
class TrainConfig:
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    batch_size: int | None = None
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    checkpoint: str = "best"
    workers: int = 0
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.stage1.epochs < 0:
            raise ConfigError("stage-1 epochs must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.checkpoint not in ("best", "final"):
            raise ConfigError(f"checkpoint must be 'best' or 'final', got {self.checkpoint!r}")

    def resolved(self, spec: ArchitectureSpec) -> "TrainConfig":
        """Fill architecture-dependent defaults (batch size, stage-2 epochs)."""
        stage2 = self.stage2 if self.stage2.epochs is not None else replace(self.stage2, epochs=spec.stage2_epochs)
        return replace(self, stage2=stage2, batch_size=self.batch_size or spec.batch_size)

    def to_dict(self) -> dict:
        return asdict(self)


# -- schedule and loss -------------------------------------------------------

def plateau_lr(history: Sequence[float], config: Stage2Config = Stage2Config()) -> float:
    """Learning rate for the epoch after ``history``.

    ``history`` holds the monitored validation metric of every completed
    stage-2 epoch. After ``patience`` consecutive epochs without beating the
    best value by more than the threshold, the rate is divided by the plateau
    factor (never below ``min_lr``) and the wait counter restarts.
    """
    if len(history) == 0:
        raise ValueError("history must not be empty")
    maximize = config.monitor == "val_accuracy"
    lr = config.base_lr
    best = -math.inf if maximize else math.inf
    wait = 0
    for value in history:
        improved = value - config.improvement_threshold > best if maximize else \
            value + config.improvement_threshold < best
        if improved:
            best = value
            wait = 0
            continue
        wait += 1
        if wait >= config.patience:
            if lr > config.min_lr:
                lr = max(lr / config.plateau_factor, config.min_lr)
            wait = 0
    return lr


def categorical_cross_entropy(logits: torch.Tensor, onehot: torch.Tensor) -> torch.Tensor:
    """Per-sample cross-entropy of softmax(logits) against one-hot targets."""
    return -(onehot * torch.log_softmax(logits, dim=1)).sum(dim=1)


# -- logs and results --------------------------------------------------------

@dataclass(frozen=True)
class EpochRecord:
    stage: int
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    lr: float
    seconds: float


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)
    aborted: bool = False
    abort_reason: str | None = None

    def append(self, record: EpochRecord):
        same = [r for r in self.records if r.stage == record.stage]
        if same and record.epoch <= same[-1].epoch:
            raise ValueError("epoch indices must increase within a stage")
        self.records.append(record)

    def stage(self, stage: int) -> list[EpochRecord]:
        return [r for r in self.records if r.stage == stage]

    def __len__(self):
        return len(self.records)

    def dumps(self) -> str:
        lines = [json.dumps(asdict(r), separators=(",", ":")) for r in self.records]
        if self.aborted:
            lines.append(json.dumps({"aborted": True, "reason": self.abort_reason}))
        return "\n".join(lines) + ("\n" if lines else "")

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.dumps(), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: str | Path) -> "TrainingLog":
        log_ = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            data = json.loads(line)
            if data.get("aborted"):
                log_.aborted, log_.abort_reason = True, data.get("reason")
            else:
                log_.records.append(EpochRecord(**data))
        return log_


@dataclass
class ExperimentResult:
    directory: Path
    bundle: Path
    log: TrainingLog
    config: dict
    manifest_hash: str
    checkpoint: str
    report: Path | None = None
    model: ClassifierModel | None = field(default=None, repr=False)

    @property
    def train_seconds(self) -> float:
        return float(sum(r.seconds for r in self.log.records))


# -- training loop -----------------------------------------------------------

def _epoch_order(n: int, seed: int, stage: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([int(seed), 1000 + stage, int(epoch)]).permutation(n)


def _evaluate(model: ClassifierModel, crops: np.ndarray, targets: np.ndarray, batch_size: int):
    model.eval()
    total_loss, hits = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(crops), batch_size):
            logits = model(to_tensor(crops[start:start + batch_size]))
            t = torch.from_numpy(targets[start:start + batch_size])
            onehot = nn.functional.one_hot(t, model.num_classes).to(logits.dtype)
            total_loss += float(categorical_cross_entropy(logits, onehot).sum())
            hits += int((logits.argmax(1) == t).sum())
    return total_loss / len(crops), hits / len(crops)


def _run_epoch(model, optimizer, data: SplitImages, stage, epoch, config: TrainConfig, pool):
    model.train()
    order = _epoch_order(len(data), config.seed, stage, epoch)
    total_loss, hits = 0.0, 0
    for start in range(0, len(order), config.batch_size):
        idx = order[start:start + config.batch_size]
        # Augmentation keys on (stage, epoch); sample index keys the sub-stream.
        batch = data.train_batch(idx, epoch + 100_000 * stage, config.augment, config.seed, pool)
        x = to_tensor(batch)
        t = torch.from_numpy(data.targets[idx])
        logits = model(x)
        onehot = nn.functional.one_hot(t, model.num_classes).to(logits.dtype)
        loss = categorical_cross_entropy(logits, onehot).mean()
        if not torch.isfinite(loss):
            return math.nan, math.nan
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        total_loss += float(loss.detach()) * len(idx)
        hits += int((logits.detach().argmax(1) == t).sum())
    return total_loss / len(order), hits / len(order)


def _make_optimizer(kind: str, params, lr: float):
    if kind == "adam":
        return torch.optim.Adam(params, lr=lr)
    if kind == "rmsprop":
        return torch.optim.RMSprop(params, lr=lr)
    raise ConfigError(f"unknown optimizer {kind!r}")


def _snapshot(model: nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def train_two_stage(spec: ArchitectureSpec, manifest: DatasetManifest, data_root: str | Path,
                    out_dir: str | Path, config: TrainConfig = TrainConfig(),
                    assets: PretrainedAssets | None = None,
                    train_records=None, evaluate_split: str | None = "test") -> ExperimentResult:
    """Run both stages, export a bundle and (optionally) evaluate it.

    ``out_dir`` receives ``config.json``, ``manifest.jsonl`` and its hash,
    ``train_log.jsonl``, ``checkpoints/{best,final}.pt`` and ``bundle/``.
    """
    config = config.resolved(spec)
    out_dir = Path(out_dir)
    if (out_dir / "train_log.jsonl").exists():
        raise ConfigError(f"{out_dir} already holds a training run")
    out_dir.mkdir(parents=True, exist_ok=True)
    if train_records is not None:
        keep = list(train_records) + [r for r in manifest.records if r.split != "train"]
        manifest = manifest.subset(keep, name=f"{manifest.name}-train{len(train_records)}")
    if not manifest.split("train"):
        raise DataError("manifest has no train split")
    if not manifest.split("val"):
        raise DataError("manifest has no val split")

    torch.manual_seed(config.seed)
    snapshot = {
        "architecture": spec.to_dict(),
        "train": config.to_dict(),
        "manifest": manifest.name,
        "manifest_sha256": manifest_hash(manifest),
        "data_root": str(Path(data_root).resolve()),
        "optimizer_defaults": {"adam": {"betas": [0.9, 0.999], "eps": 1e-8},
                               "rmsprop": {"alpha": 0.99, "eps": 1e-8, "momentum": 0.0}},
        "determinism": "cpu kernels; results may differ across torch builds or accelerators",
    }
    (out_dir / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out_dir / "manifest.sha256").write_text(snapshot["manifest_sha256"] + "\n", encoding="utf-8")
    write_manifest(manifest, out_dir / "manifest.jsonl")

    train = SplitImages(manifest, data_root, "train")
    val = SplitImages(manifest, data_root, "val")
    val_crops = eval_crops(val, spec.input_size)
    model = build_classifier(spec, len(manifest.labels), assets, label_range=manifest.label_range,
                             seed=config.seed)
    log_ = TrainingLog()
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    best = {"acc": -1.0, "state": None}
    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None

    def run_stage(stage, optimizer, epochs, lr_for):
        last_good = _snapshot(model)
        history: list[float] = []
        for epoch in range(1, epochs + 1):
            lr = lr_for(history)
            for group in optimizer.param_groups:
                group["lr"] = lr
            t0 = time.monotonic()
            loss, acc = _run_epoch(model, optimizer, train, stage, epoch, config, pool)
            if not math.isfinite(loss):
                model.load_state_dict(last_good)
                path = ckpt_dir / "last_good.pt"
                torch.save(last_good, path)
                log_.aborted, log_.abort_reason = True, f"non-finite loss in stage {stage} epoch {epoch}"
                log_.write(out_dir / "train_log.jsonl")
                raise DivergenceError(log_.abort_reason, checkpoint=path)
            val_loss, val_acc = _evaluate(model, val_crops, val.targets, config.eval_batch_size)
            seconds = time.monotonic() - t0
            log_.append(EpochRecord(stage, epoch, loss, acc, val_loss, val_acc, lr, seconds))
            log.info("stage %d epoch %d loss %.4f acc %.3f val_acc %.3f lr %.2e (%.1fs)",
                     stage, epoch, loss, acc, val_acc, lr, seconds)
            history.append(val_acc if config.stage2.monitor == "val_accuracy" else val_loss)
            last_good = _snapshot(model)
            if val_acc > best["acc"]:
                best["acc"], best["state"] = val_acc, last_good
                best["where"] = (stage, epoch)

    try:
        configure_stage(model, "head_only")
        opt1 = _make_optimizer(config.stage1.optimizer, [p for p in model.parameters() if p.requires_grad],
                               config.stage1.lr)
        run_stage(1, opt1, config.stage1.epochs, lambda h: config.stage1.lr)

        configure_stage(model, "fine_tune")
        opt2 = _make_optimizer(config.stage2.optimizer, [p for p in model.parameters() if p.requires_grad],
                               config.stage2.base_lr)
        run_stage(2, opt2, config.stage2.epochs,
                  lambda h: plateau_lr(h, config.stage2) if h else config.stage2.base_lr)
    finally:
        if pool is not None:
            pool.shutdown()

    log_.write(out_dir / "train_log.jsonl")
    final_state = _snapshot(model)
    torch.save(final_state, ckpt_dir / "final.pt")
    if best["state"] is not None:
        torch.save(best["state"], ckpt_dir / "best.pt")
    chosen = config.checkpoint if best["state"] is not None else "final"
    if chosen == "best":
        model.load_state_dict(best["state"])
    model.eval()
    bundle = export_bundle(model, out_dir / "bundle", extra={
        "checkpoint": chosen,
        "best_epoch": list(best.get("where", ())),
        "manifest_sha256": snapshot["manifest_sha256"],
        "unfrozen_layers": model.unfrozen_layers,
        "trainable_params_stage2": count_params(model, trainable_only=True),
    })
    result = ExperimentResult(out_dir, bundle, log_, snapshot, snapshot["manifest_sha256"], chosen, model=model)
    if evaluate_split and manifest.split(evaluate_split):
        from .evaluate import evaluate_model, write_report

        report = evaluate_model(model, manifest, data_root, evaluate_split, batch_size=config.eval_batch_size)
        result.report = write_report(report, out_dir / "eval_report")
    return result


# -- ablation ----------------------------------------------------------------

@dataclass(frozen=True)
class AblationPoint:
    size: int
    macro_f1: float
    weighted_f1: float
    accuracy: float
    per_class_f1: dict
    train_seconds: float
    directory: str


def balanced_subset(manifest: DatasetManifest, per_class: int, seed: int = 0, split: str = "train"):
    """``per_class`` train records of every class, chosen by a seeded draw."""
    chosen = []
    for label in manifest.labels:
        recs = [r for r in manifest.split(split) if r.label == label]
        if per_class > len(recs):
            raise ConfigError(f"class {label} has {len(recs)} {split} images, {per_class} requested")
        rng = np.random.default_rng([int(seed), int(label), int(per_class)])
        idx = np.sort(rng.choice(len(recs), per_class, replace=False))
        chosen += [recs[i] for i in idx]
    return chosen


def ablate_training_size(spec: ArchitectureSpec, manifest: DatasetManifest, sizes: Sequence[int],
                         data_root: str | Path, out_dir: str | Path, config: TrainConfig = TrainConfig(),
                         assets: PretrainedAssets | None = None) -> list[AblationPoint]:
    """Train one model per size on a class-balanced subset; evaluate all on the same test split."""
    from .evaluate import evaluate_model

    if not manifest.split("test"):
        raise DataError("ablation needs a test split")
    out_dir = Path(out_dir)
    subsets = {size: balanced_subset(manifest, size, config.seed) for size in sizes}
    points = []
    for size in sizes:
        run_dir = out_dir / f"size_{size:04d}"
        result = train_two_stage(spec, manifest, data_root, run_dir, config, assets,
                                 train_records=subsets[size], evaluate_split=None)
        report = evaluate_model(result.model, manifest, data_root, "test", batch_size=config.eval_batch_size)
        points.append(AblationPoint(
            size=size,
            macro_f1=report.macro_f1,
            weighted_f1=report.weighted_f1,
            accuracy=report.accuracy,
            per_class_f1={m.label: m.f1 for m in report.per_class},
            train_seconds=result.train_seconds,
            directory=str(run_dir),
        ))
    write_ablation(points, out_dir / "ablation.jsonl")
    return points


def write_ablation(points: Sequence[AblationPoint], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(asdict(p), separators=(",", ":")) + "\n" for p in points), encoding="utf-8")
    return path


def read_ablation(path: str | Path) -> list[AblationPoint]:
    points = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            data = json.loads(line)
            data["per_class_f1"] = {int(k): v for k, v in data["per_class_f1"].items()}
            points.append(AblationPoint(**data))
    return points
