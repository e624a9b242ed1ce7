"""Command-line entry point: ``seastate <command> [--config FILE] [--workdir DIR] [flags]``.

Settings come from the config file, then command-line flags. Every command
writes its merged settings to ``<out>/<command>.cfg`` before doing any
work, so a run can be repeated from that snapshot alone.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, dumps_config, load_config, merge
from .errors import ConfigError, ReportError, SeaStateError, UsageError

log = logging.getLogger("seastate")

COMMANDS = ("build-dataset", "synth", "augment-preview", "train", "evaluate", "cross-eval",
            "ablate-size", "profile", "report")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seastate", description="Sea-state classification toolkit.")
    parser.add_argument("--version", action="version", version=f"seastate {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="run configuration file (INI sections)")
        p.add_argument("--workdir", default=".", help="base directory for every relative path")
        p.add_argument("--out", help="output directory (output.dir)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = command("synth", "generate a synthetic textured dataset")
    p.add_argument("--classes", type=int)
    p.add_argument("--train", type=int)
    p.add_argument("--val", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--difficulty", type=float)
    p.add_argument("--workers", type=int)

    p = command("build-dataset", "sample and crop a balanced dataset from videos")
    p.add_argument("--sessions", help="session index (tab or comma delimited)")
    p.add_argument("--strategy", choices=("LL", "R"))
    p.add_argument("--train", type=int)
    p.add_argument("--val", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--holdout", choices=("trailing", "session"))
    p.add_argument("--workers", type=int)
    p.add_argument("--dry-run", action="store_true", help="plan and write the manifest without crops")

    p = command("augment-preview", "write a contact sheet of augmented training crops")
    p.add_argument("--manifest")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)

    p = command("train", "two-stage transfer learning")
    p.add_argument("--manifest")
    p.add_argument("--arch")
    p.add_argument("--assets")
    p.add_argument("--stage1-epochs", type=int)
    p.add_argument("--stage2-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)

    p = command("evaluate", "score a bundle on a dataset split")
    p.add_argument("--bundle")
    p.add_argument("--manifest")
    p.add_argument("--split")

    p = command("cross-eval", "score a bundle in-domain and on a foreign dataset")
    p.add_argument("--bundle")
    p.add_argument("--home")
    p.add_argument("--foreign")
    p.add_argument("--foreign-range", help="foreign label range, e.g. 1,4")
    p.add_argument("--split")

    p = command("ablate-size", "train once per training-set size")
    p.add_argument("--manifest")
    p.add_argument("--arch")
    p.add_argument("--assets")
    p.add_argument("--sizes", help="comma separated images per class")
    p.add_argument("--stage1-epochs", type=int)
    p.add_argument("--stage2-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)

    p = command("profile", "training-time and inference-resource tables")
    p.add_argument("--bundle", action="append", help="bundle to benchmark (repeatable)")
    p.add_argument("--run", action="append", help="experiment directory with a training log (repeatable)")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--batches", type=int)
    p.add_argument("--warmup", type=int)

    p = command("report", "render tables and plots for an experiment directory")
    p.add_argument("experiment", nargs="?", help="experiment directory (defaults to output.dir)")
    return parser


def _overrides(args) -> dict:
    g = lambda name: getattr(args, name, None)  # noqa: E731
    joined = lambda v: ",".join(v) if v else None  # noqa: E731
    c = args.command
    ds = {"workers": g("workers"), "seed": g("seed") if c in ("synth", "build-dataset") else None}
    if c == "synth":
        ds.update(synth_classes=g("classes"), synth_train=g("train"), synth_val=g("val"),
                  synth_test=g("test"), synth_size=g("size"), synth_difficulty=g("difficulty"))
    if c == "build-dataset":
        ds.update(sessions=g("sessions"), strategy=g("strategy"), train_target=g("train"),
                  val_target=g("val"), test_target=g("test"), holdout=g("holdout"))
    if c in ("augment-preview", "train", "evaluate", "ablate-size"):
        ds["manifest"] = g("manifest")
    training = {}
    if c in ("train", "ablate-size", "augment-preview"):
        training = {"seed": g("seed"), "stage1_epochs": g("stage1_epochs"), "stage2_epochs": g("stage2_epochs"),
                    "batch_size": g("batch_size")}
        if c == "train":
            training["workers"] = g("workers")
    profiling = {}
    if c == "profile":
        profiling = {"bundles": joined(g("bundle")), "runs": joined(g("run")), "batch_size": g("batch_size"),
                     "num_batches": g("batches"), "warmup_batches": g("warmup")}
    return {
        "dataset": ds,
        "model": {"architecture": g("arch"), "assets": g("assets")},
        "training": training,
        "augment": {"preview_count": g("count")},
        "evaluation": {"bundle": g("bundle") if c != "profile" else None, "split": g("split"),
                       "home": g("home"), "foreign": g("foreign"), "foreign_label_range": g("foreign_range")},
        "ablation": {"sizes": g("sizes")},
        "profiling": profiling,
        "output": {"dir": g("out") or (g("experiment") if c == "report" else None)},
    }


class Context:
    def __init__(self, command: str, config: RunConfig, workdir: Path):
        self.command = command
        self.config = config
        self.workdir = workdir

    def path(self, value: str | None, what: str) -> Path:
        if not value:
            raise ConfigError(f"{what} is not set")
        p = Path(value)
        return p if p.is_absolute() else self.workdir / p

    @property
    def out(self) -> Path:
        return self.path(self.config.output.dir, "output.dir")

    def snapshot(self) -> Path:
        """Write the merged config first; refuse to reuse an output directory for the same command."""
        target = self.out / f"{self.command}.cfg"
        if target.exists() and self.command != "report":
            raise ConfigError(f"{self.out} already holds a {self.command} run; choose a new output directory")
        self.out.mkdir(parents=True, exist_ok=True)
        target.write_text(dumps_config(self.config), encoding="utf-8")
        return target


def _manifest(ctx: Context, value: str | None, what: str = "dataset.manifest"):
    from .dataset import dataset_root, read_manifest

    path = ctx.path(value, what)
    return read_manifest(path), dataset_root(path)


def _assets(ctx: Context):
    from .models import PretrainedAssets

    cfg = ctx.config.model.assets
    return PretrainedAssets.load(ctx.path(cfg, "model.assets") if cfg else None)


def _spec(ctx: Context):
    from .models import get_spec

    return get_spec(ctx.config.model.architecture)


# -- commands ----------------------------------------------------------------

def cmd_synth(ctx: Context) -> int:
    from .dataset import verify_manifest
    from .synth import SynthConfig, generate_dataset

    d = ctx.config.dataset
    cfg = SynthConfig(num_classes=d.synth_classes, train_per_class=d.synth_train, val_per_class=d.synth_val,
                      test_per_class=d.synth_test, image_size=d.synth_size, seed=d.seed,
                      difficulty=d.synth_difficulty)
    manifest = generate_dataset(cfg, ctx.out, name=d.name, workers=d.workers)
    print(verify_manifest(manifest).format(), end="")
    print(f"wrote {len(manifest.records)} images to {ctx.out}")
    return 0


def cmd_build_dataset(ctx: Context, dry_run: bool = False) -> int:
    from .dataset import CropRegion, build_dataset, read_session_index, verify_manifest, write_manifest

    d = ctx.config.dataset
    sessions = read_session_index(ctx.path(d.sessions, "dataset.sessions"))
    if d.sea_region is not None:
        default = CropRegion(*d.sea_region)
        sessions = [s if s.sea_region is not None else dataclasses.replace(s, sea_region=default) for s in sessions]
    targets = {"train": d.train_target, "val": d.val_target, "test": d.test_target}
    manifest = build_dataset(sessions, targets, d.strategy, d.seed, None if dry_run else ctx.out, d.name,
                             d.holdout, d.ll_offset, d.workers)
    if dry_run:
        write_manifest(manifest, ctx.out / "manifest.jsonl")
    report = verify_manifest(manifest)
    (ctx.out / "balance.txt").write_text(report.format(), encoding="utf-8")
    print(report.format(), end="")
    return 0


def cmd_augment_preview(ctx: Context) -> int:
    from .augment import augment_train, contact_sheet, prepare_eval, sample_rng
    from .dataset import load_image, save_image
    from .synth import to_uint8

    manifest, root = _manifest(ctx, ctx.config.dataset.manifest)
    aug = ctx.config.train_config().augment
    records = manifest.split("train") or manifest.records
    rng = np.random.default_rng(ctx.config.training.seed)
    count = min(ctx.config.augment.preview_count, len(records))
    chosen = [records[i] for i in sorted(rng.choice(len(records), count, replace=False))]
    tiles = []
    for i, rec in enumerate(chosen):
        image = load_image(root / rec.path)
        tiles.append(prepare_eval(image, aug.crop_out))
        tiles += [augment_train(image, sample_rng(aug.seed, k, i), aug) for k in range(3)]
    path = ctx.out / "augment_preview.png"
    save_image(path, to_uint8(contact_sheet(tiles, cols=4)))
    print(f"wrote {path} (rows: center crop, then 3 augmented draws)")
    return 0


def cmd_train(ctx: Context) -> int:
    from .train import train_two_stage

    manifest, root = _manifest(ctx, ctx.config.dataset.manifest)
    result = train_two_stage(_spec(ctx), manifest, root, ctx.out, ctx.config.train_config(), _assets(ctx))
    print(f"bundle: {result.bundle}")
    if result.report is not None:
        print(result.report.with_suffix(".txt").read_text(encoding="utf-8"), end="")
    return 0


def cmd_evaluate(ctx: Context) -> int:
    from .evaluate import evaluate_model, write_report
    from .metrics import format_report

    e = ctx.config.evaluation
    manifest, root = _manifest(ctx, ctx.config.dataset.manifest)
    report = evaluate_model(ctx.path(e.bundle, "evaluation.bundle"), manifest, root, e.split)
    write_report(report, ctx.out / "eval_report")
    print(format_report(report), end="")
    return 0


def cmd_cross_eval(ctx: Context) -> int:
    from .evaluate import cross_dataset_eval, write_cross_report
    from .metrics import LabelMapping, format_cross_report
    from .models import load_bundle

    e = ctx.config.evaluation
    model = load_bundle(ctx.path(e.bundle, "evaluation.bundle"))
    home = _manifest(ctx, e.home, "evaluation.home")
    foreign = _manifest(ctx, e.foreign, "evaluation.foreign")
    target = tuple(e.foreign_label_range) if e.foreign_label_range else tuple(foreign[0].label_range)
    mapping = LabelMapping(tuple(model.label_range), target)
    report = cross_dataset_eval(model, home, foreign, mapping, e.split)
    write_cross_report(report, ctx.out / "cross_eval")
    print(format_cross_report(report), end="")
    return 0


def cmd_ablate_size(ctx: Context) -> int:
    from .train import ablate_training_size

    manifest, root = _manifest(ctx, ctx.config.dataset.manifest)
    points = ablate_training_size(_spec(ctx), manifest, ctx.config.ablation.sizes, root, ctx.out,
                                  ctx.config.train_config(), _assets(ctx))
    print("size\tmacro_f1\tweighted_f1\ttrain_seconds")
    for p in points:
        print(f"{p.size}\t{p.macro_f1:.4f}\t{p.weighted_f1:.4f}\t{p.train_seconds:.1f}")
    return 0


def cmd_profile(ctx: Context) -> int:
    from .profiler import format_profiles, profile_inference, profile_training, write_profiles
    from .train import TrainingLog

    p = ctx.config.profiling
    if not p.bundles and not p.runs:
        raise ConfigError("profiling needs at least one of profiling.bundles or profiling.runs")
    training = []
    for run in p.runs or ():
        run_dir = ctx.path(run, "profiling.runs")
        cfg = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
        training.append(profile_training(TrainingLog.read(run_dir / "train_log.jsonl"),
                                         model=cfg["architecture"]["name"],
                                         batch_size=cfg["train"]["batch_size"],
                                         input_size=cfg["architecture"]["input_size"]))
    inference = [profile_inference(ctx.path(b, "profiling.bundles"), p.batch_size, p.num_batches,
                                   p.warmup_batches) for b in p.bundles or ()]
    text = format_profiles(training, inference)
    (ctx.out / "profile.txt").write_text(text, encoding="utf-8")
    write_profiles(ctx.out / "profile.jsonl", training + inference)
    print(text, end="")
    return 0


def emit_report(experiment: Path) -> list[Path]:
    """Render every figure and table whose inputs exist in ``experiment``."""
    from .metrics import read_confusion
    from .plots import plot_ablation, plot_confusion, plot_learning_curves
    from .train import TrainingLog, read_ablation

    inputs = {
        "train_log.jsonl": experiment / "train_log.jsonl",
        "eval_report_confusion.tsv": experiment / "eval_report_confusion.tsv",
        "ablation.jsonl": experiment / "ablation.jsonl",
        "cross_eval_foreign_confusion.tsv": experiment / "cross_eval_foreign_confusion.tsv",
    }
    present = {k: v for k, v in inputs.items() if v.exists()}
    if not present:
        raise ReportError(f"{experiment} has none of the report inputs; absent: {', '.join(inputs)}")
    figures = experiment / "figures"
    written = []
    if "train_log.jsonl" in present:
        written.append(plot_learning_curves(TrainingLog.read(present["train_log.jsonl"]),
                                            figures / "learning_curves.png"))
    if "eval_report_confusion.tsv" in present:
        cm = read_confusion(present["eval_report_confusion.tsv"].read_text(encoding="utf-8"))
        written.append(plot_confusion(cm, figures / "confusion.png", "test split"))
    if "cross_eval_foreign_confusion.tsv" in present:
        cm = read_confusion(present["cross_eval_foreign_confusion.tsv"].read_text(encoding="utf-8"))
        written.append(plot_confusion(cm, figures / "foreign_confusion.png", "foreign dataset"))
    if "ablation.jsonl" in present:
        points = read_ablation(present["ablation.jsonl"])
        written += plot_ablation(points, figures / "ablation_f1.png", figures / "ablation_time.png")
        rows = "size\tmacro_f1\tweighted_f1\taccuracy\ttrain_seconds\n" + "".join(
            f"{p.size}\t{p.macro_f1:.4f}\t{p.weighted_f1:.4f}\t{p.accuracy:.4f}\t{p.train_seconds:.1f}\n"
            for p in sorted(points, key=lambda p: p.size))
        table = experiment / "ablation.tsv"
        table.write_text(rows, encoding="utf-8")
        written.append(table)
    return written


def cmd_report(ctx: Context) -> int:
    for path in emit_report(ctx.out):
        print(path)
    return 0


HANDLERS = {
    "synth": cmd_synth,
    "build-dataset": cmd_build_dataset,
    "augment-preview": cmd_augment_preview,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "cross-eval": cmd_cross_eval,
    "ablate-size": cmd_ablate_size,
    "profile": cmd_profile,
    "report": cmd_report,
}

_CATEGORY = {1: "usage", 2: "config", 3: "data", 4: "asset", 5: "runtime"}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help().rstrip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        workdir = Path(args.workdir)
        config_path = args.config
        if config_path and not Path(config_path).is_absolute():
            config_path = workdir / config_path
        config = merge(load_config(config_path), _overrides(args))
        ctx = Context(args.command, config, workdir)
        ctx.snapshot()
        if args.command == "build-dataset":
            return cmd_build_dataset(ctx, dry_run=args.dry_run)
        return HANDLERS[args.command](ctx)
    except SeaStateError as exc:
        print(f"error[{_CATEGORY.get(exc.exit_code, 'runtime')}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
