"""Training-time and inference-resource profiles.

Absolute numbers depend entirely on the machine; what the profiler
guarantees is the format, internal consistency and repeatability of its
measurements.
"""
from __future__ import annotations

import json
import os
import platform
import statistics
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import psutil
import torch

from .augment import prepare_eval
from .errors import ProfileError
from .models import ClassifierModel, load_bundle, to_tensor
from .train import ExperimentResult, TrainingLog

_MEASURING = threading.Lock()
MB = 1024 * 1024

TRAINING_COLUMNS = ("Model", "Input Image Size", "Training Batch Size", "Epochs",
                    "Total training time (h:mm)", "Training Time Per Epoch (s)")
INFERENCE_COLUMNS = ("Model", "Input Image Size", "Inference Batch Size", "Memory usage (model only, MB)",
                     "Peak memory usage during inference (MB)", "Average inference throughput (images/s)",
                     "Throughput incl. preprocessing (images/s)")


@dataclass
class ResourceProfile:
    model: str
    input_size: int
    batch_size: int | None = None
    epochs: int | None = None
    total_training_time: float | None = None
    time_per_epoch: float | None = None
    batches: int | None = None
    warmup_batches: int | None = None
    throughput: float | None = None
    throughput_with_preprocessing: float | None = None
    model_memory_mb: float | None = None
    peak_memory_mb: float | None = None
    memory_source: str | None = None
    samples: list = field(default_factory=list)
    hardware: str = ""

    def training_consistent(self, tolerance: float = 0.20) -> bool:
        if not (self.epochs and self.time_per_epoch and self.total_training_time):
            return False
        estimate = self.time_per_epoch * self.epochs
        return abs(estimate - self.total_training_time) <= tolerance * self.total_training_time

    def to_dict(self) -> dict:
        return asdict(self)


def hardware_descriptor() -> str:
    parts = [platform.machine(), platform.processor() or "cpu", f"{os.cpu_count()} cpus",
             f"torch {torch.__version__}", f"{torch.get_num_threads()} threads"]
    if torch.cuda.is_available():
        parts.append(torch.cuda.get_device_name(0))
    return ", ".join(p for p in parts if p)


def hmm(seconds: float) -> str:
    minutes = int(round(seconds / 60.0))
    return f"{minutes // 60}:{minutes % 60:02d}"


def profile_training(run: ExperimentResult | TrainingLog, model: str | None = None,
                     batch_size: int | None = None, input_size: int = 224) -> ResourceProfile:
    """Per-epoch time is the median epoch duration, ignoring the first (warm-up) epoch."""
    if isinstance(run, ExperimentResult):
        log = run.log
        arch = run.config.get("architecture", {})
        model = model or arch.get("name", "unknown")
        batch_size = batch_size or run.config.get("train", {}).get("batch_size")
        input_size = arch.get("input_size", input_size)
    else:
        log = run
    durations = [r.seconds for r in log.records]
    if not durations or any(d is None or not np.isfinite(d) for d in durations):
        raise ProfileError("training log has no usable per-epoch timing")
    steady = durations[1:] if len(durations) > 1 else durations
    return ResourceProfile(
        model=model or "unknown",
        input_size=input_size,
        batch_size=batch_size,
        epochs=len(durations),
        total_training_time=float(sum(durations)),
        time_per_epoch=float(statistics.median(steady)),
        hardware=hardware_descriptor(),
    )


def _rss_mb() -> float:
    return psutil.Process().memory_info().rss / MB


def _tensor_mb(model: torch.nn.Module) -> float:
    total = sum(p.numel() * p.element_size() for p in model.parameters())
    total += sum(b.numel() * b.element_size() for b in model.buffers())
    return total / MB


def profile_inference(bundle, batch_size: int = 32, num_batches: int = 10, warmup_batches: int = 2,
                      source_size: int = 331, seed: int = 0) -> ResourceProfile:
    """Throughput and memory of batched inference on random source-sized images.

    Two throughputs are reported: model compute on ready tensors, and the
    full path including the center crop and tensor conversion.
    """
    if batch_size < 1:
        raise ProfileError("batch_size must be >= 1")
    if num_batches < 1:
        raise ProfileError("num_batches must be >= 1 after warm-up")
    if not _MEASURING.acquire(blocking=False):
        raise ProfileError("another profiling run holds the measurement lock")
    try:
        samples = [("before_load", _rss_mb())]
        model: ClassifierModel = bundle if isinstance(bundle, ClassifierModel) else load_bundle(bundle)
        model.eval()
        cuda = torch.cuda.is_available() and next(model.parameters()).is_cuda
        if cuda:
            torch.cuda.reset_peak_memory_stats()
            model_mb = torch.cuda.memory_allocated() / MB
            source = "cuda_allocator"
        else:
            model_mb = _tensor_mb(model)
            source = "tensor_bytes+process_rss"
        samples.append(("after_load", _rss_mb()))

        size = model.spec.input_size
        rng = np.random.default_rng(seed)
        raw = rng.integers(0, 256, (batch_size, source_size, source_size, 3), dtype=np.uint8)
        ready = to_tensor(np.stack([prepare_eval(im, size) for im in raw]))
        peak = samples[-1][1]
        with torch.no_grad():
            for _ in range(warmup_batches):
                model(ready)
            start = time.perf_counter()
            for _ in range(num_batches):
                model(ready)
                peak = max(peak, _rss_mb())
            compute = time.perf_counter() - start
            start = time.perf_counter()
            for _ in range(num_batches):
                model(to_tensor(np.stack([prepare_eval(im, size) for im in raw])))
                peak = max(peak, _rss_mb())
            full = time.perf_counter() - start
        samples.append(("after_inference", _rss_mb()))
        if cuda:
            peak_mb = torch.cuda.max_memory_allocated() / MB
        else:
            peak_mb = max(peak, samples[-1][1])
        images = num_batches * batch_size
        return ResourceProfile(
            model=model.spec.name,
            input_size=size,
            batch_size=batch_size,
            batches=num_batches,
            warmup_batches=warmup_batches,
            throughput=images / compute,
            throughput_with_preprocessing=images / full,
            model_memory_mb=model_mb,
            peak_memory_mb=peak_mb,
            memory_source=source,
            samples=samples,
            hardware=hardware_descriptor(),
        )
    finally:
        _MEASURING.release()


def _cell(value, fmt="{:.2f}"):
    return "n/a" if value is None else fmt.format(value)


def training_row(p: ResourceProfile) -> list[str]:
    return [p.model, f"{p.input_size}x{p.input_size}", _cell(p.batch_size, "{}"), _cell(p.epochs, "{}"),
            "n/a" if p.total_training_time is None else hmm(p.total_training_time),
            _cell(p.time_per_epoch, "{:.1f}")]


def inference_row(p: ResourceProfile) -> list[str]:
    return [p.model, f"{p.input_size}x{p.input_size}", _cell(p.batch_size, "{}"), _cell(p.model_memory_mb),
            _cell(p.peak_memory_mb), _cell(p.throughput), _cell(p.throughput_with_preprocessing)]


def _table(header: Sequence[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [list(header), *rows]) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in [list(header), *rows]]
    return "\n".join(lines) + "\n"


def format_profiles(training: Sequence[ResourceProfile] = (), inference: Sequence[ResourceProfile] = ()) -> str:
    parts = []
    if training:
        parts.append("[training]\n" + _table(TRAINING_COLUMNS, [training_row(p) for p in training]))
    if inference:
        parts.append("[inference]\n" + _table(INFERENCE_COLUMNS, [inference_row(p) for p in inference]))
        sources = sorted({p.memory_source for p in inference if p.memory_source})
        parts.append(f"memory source: {', '.join(sources)}\nhardware: {inference[0].hardware}\n")
    return "\n".join(parts)


def write_profiles(path: str | Path, profiles: Sequence[ResourceProfile]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(p.to_dict(), separators=(",", ":")) + "\n" for p in profiles),
                    encoding="utf-8")
    return path
