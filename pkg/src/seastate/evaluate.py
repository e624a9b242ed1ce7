"""Model-driven evaluation: run a bundle over a manifest split and score it."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import DatasetManifest
from .errors import MappingRequiredError
from .loader import SplitImages, eval_crops
from .metrics import (CrossEvalReport, EvalReport, LabelMapping, aggregate, confusion_matrix, cross_report,
                      dumps_report, format_cross_report, format_report, write_confusion)
from .models import ClassifierModel, load_bundle, predict_labels


def _model(bundle) -> ClassifierModel:
    return bundle if isinstance(bundle, ClassifierModel) else load_bundle(bundle)


def predict_split(model: ClassifierModel, manifest: DatasetManifest, data_root, split: str,
                  batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """(true labels, predicted labels) for a split, using center crops only."""
    data = SplitImages(manifest, data_root, split)
    crops = eval_crops(data, model.spec.input_size)
    return data.labels, predict_labels(model, crops, batch_size)


def evaluate_model(bundle, manifest: DatasetManifest, data_root, split: str = "test",
                   mapping: LabelMapping | None = None, batch_size: int = 64) -> EvalReport:
    model = _model(bundle)
    model_range = tuple(model.label_range)
    if mapping is None:
        if model_range != tuple(manifest.label_range):
            raise MappingRequiredError(
                f"model labels {model_range} differ from dataset labels {tuple(manifest.label_range)}; "
                "a label mapping is required")
        space = manifest.labels
    else:
        space = mapping.union
    true, pred = predict_split(model, manifest, data_root, split, batch_size)
    return aggregate(confusion_matrix(true, pred, space))


def cross_dataset_eval(bundle, home: tuple[DatasetManifest, Path], foreign: tuple[DatasetManifest, Path],
                       mapping: LabelMapping | None = None, split: str = "test",
                       batch_size: int = 64) -> CrossEvalReport:
    """Score one model in-domain and out-of-domain over the union label space."""
    model = _model(bundle)
    home_manifest, home_root = home
    foreign_manifest, foreign_root = foreign
    if mapping is None:
        if tuple(foreign_manifest.label_range) != tuple(model.label_range):
            raise MappingRequiredError("foreign dataset label range differs from the model's; pass a mapping")
        mapping = LabelMapping(tuple(model.label_range), tuple(foreign_manifest.label_range))
    union = (min(mapping.union), max(mapping.union))
    home_map = LabelMapping(tuple(model.label_range), union)
    home_report = evaluate_model(model, home_manifest, home_root, split, home_map, batch_size)
    foreign_report = evaluate_model(model, foreign_manifest, foreign_root, split, mapping, batch_size)
    return cross_report(home_report, foreign_report)


def write_report(report: EvalReport, stem: str | Path, digits: int = 3) -> Path:
    """``stem``.txt (table), ``stem``.json (raw values) and ``stem``_confusion.tsv."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".txt").write_text(format_report(report, digits), encoding="utf-8")
    stem.with_suffix(".json").write_text(dumps_report(report), encoding="utf-8")
    Path(f"{stem}_confusion.tsv").write_text(write_confusion(report.confusion), encoding="utf-8")
    return stem.with_suffix(".json")


def write_cross_report(report: CrossEvalReport, stem: str | Path, names=("home", "foreign")) -> Path:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".txt").write_text(format_cross_report(report, 2, names), encoding="utf-8")
    stem.with_suffix(".json").write_text(dumps_report(report), encoding="utf-8")
    Path(f"{stem}_foreign_confusion.tsv").write_text(write_confusion(report.foreign.confusion), encoding="utf-8")
    drops = "metric\thome\tforeign\tdrop\n" + "".join(
        f"{k}\t{report.home.aggregates()[k]:.4f}\t{report.foreign.aggregates()[k]:.4f}\t{v:.4f}\n"
        for k, v in report.performance_drop.items())
    Path(f"{stem}_drop.tsv").write_text(drops, encoding="utf-8")
    return stem.with_suffix(".json")
