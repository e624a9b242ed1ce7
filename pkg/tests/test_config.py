import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seastate.config import RunConfig, dumps_config, load_config, loads_config, merge
from seastate.errors import ConfigError


def test_defaults_round_trip():
    c = RunConfig()
    assert loads_config(dumps_config(c)) == c
    assert dumps_config(loads_config(dumps_config(c))) == dumps_config(c)


def test_snapshot_records_defaults():
    text = dumps_config(RunConfig())
    for key in ("stage1_lr = 0.0001", "patience = 30", "plateau_factor = 5.0", "grayscale_prob = 0.2",
                "architecture = surrogate", "vit_head_width = 512"):
        assert key in text


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-7, 1e-2), st.integers(1, 100), st.sampled_from(["LL", "R"]),
       st.lists(st.integers(1, 1000), min_size=1, max_size=7), st.booleans())
def test_round_trip_property(lr, patience, strategy, sizes, with_region):
    overrides = {"training": {"stage2_lr": lr, "patience": patience, "min_lr": min(lr, 1e-6)},
                 "dataset": {"strategy": strategy, "sea_region": "0,100,640,380" if with_region else None},
                 "ablation": {"sizes": ",".join(map(str, sizes)) }}
    c = merge(RunConfig(), overrides)
    again = loads_config(dumps_config(c))
    assert again == c
    assert again.ablation.sizes == tuple(sizes)


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="training.learning_rate"):
        loads_config("[training]\nlearning_rate = 1\n")


def test_unknown_section_named():
    with pytest.raises(ConfigError, match=r"\[trainer\]"):
        loads_config("[trainer]\nx = 1\n")


def test_bad_value_named():
    with pytest.raises(ConfigError, match="training.patience"):
        loads_config("[training]\npatience = soon\n")
    with pytest.raises(ConfigError, match="dataset.strategy"):
        loads_config("[dataset]\nstrategy = horizon\n")


def test_flags_override_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("[model]\narchitecture = resnet101\n[training]\nbatch_size = 16\n")
    c = merge(load_config(p), {"model": {"architecture": "mobilenet_v2"}, "training": {"batch_size": None}})
    assert c.model.architecture == "mobilenet_v2"
    assert c.training.batch_size == 16


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.cfg")


def test_train_config_mapping():
    c = loads_config("[training]\nstage1_epochs = 5\nstage2_epochs = 30\nseed = 3\n[augment]\nflip_prob = 0\n")
    tc = c.train_config()
    assert tc.stage1.epochs == 5 and tc.stage2.epochs == 30 and tc.seed == 3
    assert tc.augment.flip_prob == 0 and tc.augment.seed == 3
    assert tc.augment.rotation_range == pytest.approx((-0.2 * math.pi, 0.2 * math.pi))
