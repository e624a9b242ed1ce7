import hashlib

import numpy as np

from seastate.metrics import ConfusionMatrix
from seastate.plots import plot_ablation, plot_confusion, plot_learning_curves
from seastate.train import AblationPoint, EpochRecord, TrainingLog


def sha(p):
    return hashlib.sha256(p.read_bytes()).hexdigest()


def test_plots_are_byte_stable(tmp_path):
    log = TrainingLog()
    for i in range(1, 4):
        log.append(EpochRecord(1, i, 2.0 / i, 0.3 * i, 2.1 / i, 0.3 * i, 1e-4, 1.0))
    log.append(EpochRecord(2, 1, 0.5, 0.9, 0.6, 0.9, 1e-4, 1.0))
    points = [AblationPoint(s, 0.5 + s / 2000, 0.5, 0.5, {}, float(s), "") for s in (10, 20, 40, 80, 160, 375, 750)]
    cm = ConfusionMatrix((1, 2), np.array([[5, 1], [2, 7]]))
    outputs = []
    for run in ("a", "b"):
        paths = [plot_learning_curves(log, tmp_path / run / "c.png"),
                 *plot_ablation(points, tmp_path / run / "f1.png", tmp_path / run / "t.png"),
                 plot_confusion(cm, tmp_path / run / "cm.png")]
        outputs.append([sha(p) for p in paths])
    assert outputs[0] == outputs[1]
    assert (tmp_path / "a/c.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
