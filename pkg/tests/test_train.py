import math

import numpy as np
import pytest
import torch

from seastate.augment import AugmentConfig
from seastate.errors import ConfigError, DataError, DivergenceError
from seastate.models import SURROGATE, build_classifier, configure_stage, load_bundle
from seastate.train import (EpochRecord, Stage1Config, Stage2Config, TrainConfig, TrainingLog,
                            ablate_training_size, balanced_subset, categorical_cross_entropy, plateau_lr,
                            read_ablation, train_two_stage)


def fast_config(**kw):
    base = dict(stage1=Stage1Config(epochs=1), stage2=Stage2Config(epochs=1), batch_size=8)
    base.update(kw)
    return TrainConfig(**base)


# -- schedule ----------------------------------------------------------------

def reference_schedule(history, base=1e-4, factor=5.0, floor=1e-6, patience=30, delta=1e-6):
    """Independent re-statement: count epochs since the last strict improvement."""
    lr, best, since = base, None, 0
    for v in history:
        if best is None or v > best + delta:
            best, since = v, 0
        else:
            since += 1
            if since == patience:
                lr, since = max(lr / factor, floor), 0
    return lr


def test_plateau_after_thirty_flat_epochs():
    flat = [0.5] * 31  # one baseline epoch, then thirty without improvement
    assert plateau_lr(flat[:30]) == 1e-4
    assert plateau_lr(flat) == pytest.approx(2e-5)
    assert plateau_lr([0.5] * 61) == pytest.approx(4e-6)


def test_plateau_clamps_by_epoch_93():
    assert plateau_lr([0.5] * 91) == pytest.approx(1e-6)
    assert plateau_lr([0.5] * 93) == pytest.approx(1e-6)
    assert plateau_lr([0.5] * 400) == pytest.approx(1e-6)


def test_plateau_improvement_resets_wait():
    history = [0.5] * 29 + [0.6] + [0.6] * 29
    assert plateau_lr(history) == 1e-4
    assert plateau_lr(history + [0.6]) == pytest.approx(2e-5)


def test_plateau_threshold_is_strict():
    assert plateau_lr([0.5] + [0.5 + 5e-7] * 30) == pytest.approx(2e-5)
    assert plateau_lr([0.5 + 1e-5 * i for i in range(40)]) == 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_plateau_matches_reference_on_random_histories(seed):
    rng = np.random.default_rng(seed)
    history = list(np.round(np.maximum.accumulate(rng.random(150)) * rng.integers(0, 2, 150), 3))
    for n in range(1, len(history) + 1):
        assert plateau_lr(history[:n]) == pytest.approx(reference_schedule(history[:n]))


def test_plateau_loss_monitor():
    cfg = Stage2Config(monitor="val_loss")
    assert plateau_lr([1.0] * 31, cfg) == pytest.approx(2e-5)
    assert plateau_lr([1.0 - 0.01 * i for i in range(40)], cfg) == 1e-4


def test_plateau_rejects_empty_history():
    with pytest.raises(ValueError):
        plateau_lr([])


@pytest.mark.parametrize("bad", [dict(min_lr=1e-3), dict(patience=0), dict(plateau_factor=1.0),
                                 dict(monitor="f1")])
def test_stage2_config_validation(bad):
    with pytest.raises(ConfigError):
        Stage2Config(**bad)


# -- loss --------------------------------------------------------------------

def test_uniform_prediction_loss_is_ln8():
    logits = torch.zeros(5, 8)
    onehot = torch.nn.functional.one_hot(torch.tensor([0, 1, 2, 3, 7]), 8).float()
    loss = categorical_cross_entropy(logits, onehot)
    assert loss.shape == (5,)
    assert torch.allclose(loss, torch.full((5,), math.log(8)), atol=1e-6)


def test_loss_matches_torch_reference():
    g = torch.Generator().manual_seed(0)
    logits = torch.randn(16, 8, generator=g)
    targets = torch.randint(0, 8, (16,), generator=g)
    ours = categorical_cross_entropy(logits, torch.nn.functional.one_hot(targets, 8).float())
    ref = torch.nn.functional.cross_entropy(logits, targets, reduction="none")
    assert torch.allclose(ours, ref, atol=1e-6)


# -- training loop -----------------------------------------------------------

def test_stage1_leaves_backbone_bit_identical(tiny_synth, tmp_path):
    manifest, root = tiny_synth
    before = build_classifier(SURROGATE, 4, seed=0).backbone.state_dict()
    cfg = fast_config(stage1=Stage1Config(epochs=2), stage2=Stage2Config(epochs=0))
    result = train_two_stage(SURROGATE, manifest, root, tmp_path / "run", cfg, evaluate_split=None)
    stage1_state = torch.load(tmp_path / "run/checkpoints/final.pt", weights_only=True)
    for name, tensor in before.items():
        assert torch.equal(stage1_state[f"backbone.{name}"], tensor), name
    assert len(result.log.stage(1)) == 2 and not result.log.stage(2)


def test_two_stage_run_writes_artifacts(tiny_synth, tmp_path):
    manifest, root = tiny_synth
    result = train_two_stage(SURROGATE, manifest, root, tmp_path / "run", fast_config())
    for name in ("config.json", "manifest.sha256", "manifest.jsonl", "train_log.jsonl", "checkpoints/best.pt",
                 "checkpoints/final.pt", "bundle/bundle.json", "eval_report.json", "eval_report.txt",
                 "eval_report_confusion.tsv"):
        assert (tmp_path / "run" / name).exists(), name
    log = TrainingLog.read(tmp_path / "run/train_log.jsonl")
    assert [(r.stage, r.epoch) for r in log.records] == [(1, 1), (2, 1)]
    assert log.records[1].lr == 1e-4
    model = load_bundle(result.bundle)
    assert model.label_range == (1, 4)
    with pytest.raises(ConfigError):
        train_two_stage(SURROGATE, manifest, root, tmp_path / "run", fast_config())


def test_training_is_deterministic(tiny_synth, tmp_path):
    manifest, root = tiny_synth
    a = train_two_stage(SURROGATE, manifest, root, tmp_path / "a", fast_config(), evaluate_split=None)
    b = train_two_stage(SURROGATE, manifest, root, tmp_path / "b", fast_config(), evaluate_split=None)
    assert [r.train_loss for r in a.log.records] == [r.train_loss for r in b.log.records]
    assert (tmp_path / "a/bundle/weights.pt").read_bytes() == (tmp_path / "b/bundle/weights.pt").read_bytes()


def test_divergence_restores_last_good_state(tiny_synth, tmp_path, monkeypatch):
    import seastate.train as train_mod

    manifest, root = tiny_synth
    real = train_mod.categorical_cross_entropy
    calls = {"n": 0}

    def flaky(logits, onehot):
        calls["n"] += 1
        out = real(logits, onehot)
        return out * float("nan") if calls["n"] > 6 else out

    monkeypatch.setattr(train_mod, "categorical_cross_entropy", flaky)
    with pytest.raises(DivergenceError) as info:
        train_two_stage(SURROGATE, manifest, root, tmp_path / "run", fast_config(), evaluate_split=None)
    assert info.value.checkpoint.exists()
    log = TrainingLog.read(tmp_path / "run/train_log.jsonl")
    assert log.aborted and "non-finite" in log.abort_reason
    state = torch.load(info.value.checkpoint, weights_only=True)
    assert all(torch.isfinite(t).all() for t in state.values() if t.is_floating_point())


def test_missing_splits_rejected(tiny_synth, tmp_path):
    manifest, root = tiny_synth
    no_val = manifest.subset([r for r in manifest.records if r.split != "val"])
    with pytest.raises(DataError):
        train_two_stage(SURROGATE, no_val, root, tmp_path / "run", fast_config())


def test_resolved_config_takes_architecture_defaults():
    cfg = TrainConfig().resolved(SURROGATE)
    assert cfg.batch_size == SURROGATE.batch_size and cfg.stage2.epochs == SURROGATE.stage2_epochs
    assert TrainConfig(batch_size=4).resolved(SURROGATE).batch_size == 4


def test_training_log_round_trip(tmp_path):
    log = TrainingLog()
    log.append(EpochRecord(1, 1, 2.0, 0.1, 2.1, 0.2, 1e-4, 3.0))
    log.append(EpochRecord(1, 2, 1.9, 0.2, 2.0, 0.3, 1e-4, 3.1))
    with pytest.raises(ValueError):
        log.append(EpochRecord(1, 2, 1.9, 0.2, 2.0, 0.3, 1e-4, 3.1))
    assert TrainingLog.read(log.write(tmp_path / "log.jsonl")).records == log.records


# -- ablation ----------------------------------------------------------------

def test_balanced_subset(tiny_synth):
    manifest, _ = tiny_synth
    sub = balanced_subset(manifest, 3, seed=1)
    assert len(sub) == 12 and {r.label for r in sub} == {1, 2, 3, 4}
    assert sub == balanced_subset(manifest, 3, seed=1)
    assert all(r.split == "train" for r in sub)
    with pytest.raises(ConfigError):
        balanced_subset(manifest, 9)


def test_ablation_writes_points(tiny_synth, tmp_path):
    manifest, root = tiny_synth
    points = ablate_training_size(SURROGATE, manifest, [2, 8], root, tmp_path / "abl", fast_config())
    assert [p.size for p in points] == [2, 8]
    assert read_ablation(tmp_path / "abl/ablation.jsonl") == points
    assert points[1].train_seconds > 0
