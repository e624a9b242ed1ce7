import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seastate.errors import EmptyReportError, LabelError
from seastate.metrics import (ConfusionMatrix, EvalReport, LabelMapping, aggregate, confusion_matrix,
                              cross_report, dumps_report, format_cross_report, format_report,
                              per_class_metrics, performance_drop, read_confusion, write_confusion)

from _tables import (AWAY_WEIGHTED, FOREIGN_ACCURACY, FOREIGN_CONFUSION, FOREIGN_F1, FOREIGN_PRECISION,
                     FOREIGN_RECALL, FOREIGN_WEIGHTED, HOME_WEIGHTED, REPORTED_DROP, RESNET_DROP,
                     RESNET_F1, RESNET_FOREIGN, RESNET_HOME, RESNET_MACRO_F1, EQUAL_SUPPORT_PRECISION, within)

LABELS = tuple(range(1, 9))


def brute_force(counts):
    """Straight-from-definition metrics with plain Python loops."""
    n = len(counts)
    total = sum(sum(r) for r in counts)
    out = []
    for k in range(n):
        tp = counts[k][k]
        fp = sum(counts[i][k] for i in range(n) if i != k)
        fn = sum(counts[k][j] for j in range(n) if j != k)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        out.append((p, r, f, tp + fn))
    acc = sum(counts[k][k] for k in range(n)) / total
    macro = [sum(m[i] for m in out) / n for i in range(3)]
    weighted = [sum(m[i] * m[3] for m in out) / total for i in range(3)]
    return out, acc, macro, weighted


def test_hand_computed_class_two():
    ms = per_class_metrics(ConfusionMatrix(LABELS, FOREIGN_CONFUSION))
    m = ms[1]
    assert m.precision == pytest.approx(1091 / 2704)
    assert m.recall == pytest.approx(1091 / 1200)
    assert m.f1 == pytest.approx(2 * (1091 / 2704) * (1091 / 1200) / (1091 / 2704 + 1091 / 1200))
    assert m.support == 1200


def test_reference_matrix_reproduces_reported_row():
    report = aggregate(ConfusionMatrix(LABELS, FOREIGN_CONFUSION))
    for m, p, r, f in zip(report.per_class, FOREIGN_PRECISION, FOREIGN_RECALL, FOREIGN_F1):
        assert within(m.precision, p, 0.005)
        assert within(m.recall, r, 0.005)
        assert within(m.f1, f, 0.005)
    assert within(report.accuracy, FOREIGN_ACCURACY, 0.005)
    assert report.accuracy == 1320 / 4800
    assert within(report.weighted_precision, FOREIGN_WEIGHTED["precision"], 0.005)
    assert within(report.weighted_recall, FOREIGN_WEIGHTED["recall"], 0.005)
    assert within(report.weighted_f1, FOREIGN_WEIGHTED["f1"], 0.005)


def test_absent_classes_are_degenerate_not_errors():
    ms = per_class_metrics(ConfusionMatrix(LABELS, FOREIGN_CONFUSION))
    for m in ms[4:]:
        assert m.support == 0
        assert "recall" in m.degenerate
        assert m.precision == 0.0 and m.recall == 0.0 and m.f1 == 0.0
    # class 4: predicted never, never correct
    assert ms[3].precision == 0.0 and "precision" not in ms[3].degenerate


def test_macro_f1_identity():
    counts = np.diag([100] * 8)
    report = aggregate(ConfusionMatrix(LABELS, counts))
    assert report.macro_f1 == 1.0
    assert sum(RESNET_F1) / 8 == pytest.approx(RESNET_MACRO_F1, abs=0.0005)


def test_equal_support_weighted_equals_macro():
    rng = np.random.default_rng(3)
    for _ in range(20):
        cm = rng.integers(0, 15, (4, 4))
        cm[:, 0] = 60 - cm[:, 1:].sum(axis=1)  # every row sums to 60
        r = aggregate(ConfusionMatrix((1, 2, 3, 4), cm))
        assert r.weighted_precision == pytest.approx(r.macro_precision, abs=1e-12)
        assert r.weighted_f1 == pytest.approx(r.macro_f1, abs=1e-12)
    assert within(np.mean(EQUAL_SUPPORT_PRECISION), 0.795, 1e-12)
    assert within(np.mean(EQUAL_SUPPORT_PRECISION), HOME_WEIGHTED["weighted_precision"], 0.005)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6).flatmap(
    lambda n: st.lists(st.lists(st.integers(0, 30), min_size=n, max_size=n), min_size=n, max_size=n)))
def test_matches_brute_force(counts):
    if sum(map(sum, counts)) == 0:
        with pytest.raises(EmptyReportError):
            aggregate(ConfusionMatrix(tuple(range(len(counts))), np.array(counts)))
        return
    report = aggregate(ConfusionMatrix(tuple(range(len(counts))), np.array(counts)))
    per, acc, macro, weighted = brute_force(counts)
    for m, (p, r, f, s) in zip(report.per_class, per):
        assert (m.precision, m.recall, m.f1, m.support) == pytest.approx((p, r, f, s), abs=1e-12)
    assert report.accuracy == pytest.approx(acc, abs=1e-12)
    assert (report.macro_precision, report.macro_recall, report.macro_f1) == pytest.approx(macro, abs=1e-12)
    assert (report.weighted_precision, report.weighted_recall, report.weighted_f1) == pytest.approx(
        weighted, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 5)), min_size=1, max_size=200))
def test_confusion_counts_pairs(pairs):
    true, pred = zip(*pairs)
    cm = confusion_matrix(true, pred, range(1, 6))
    assert cm.total == len(pairs)
    for t, p in set(pairs):
        assert cm.counts[t - 1, p - 1] == pairs.count((t, p))
    report = aggregate(cm)
    for key, value in report.aggregates().items():
        assert 0.0 <= value <= 1.0, key
    lo = min(m.f1 for m in report.per_class)
    hi = max(m.f1 for m in report.per_class)
    assert lo - 1e-12 <= report.macro_f1 <= hi + 1e-12


def test_unknown_label_rejected():
    with pytest.raises(LabelError):
        confusion_matrix([1, 2, 9], [1, 2, 2], range(1, 9))
    with pytest.raises(LabelError):
        confusion_matrix([1], [0], range(1, 9))


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        confusion_matrix([1, 2], [1], range(1, 3))


def test_empty_matrix_rejected():
    with pytest.raises(EmptyReportError):
        aggregate(ConfusionMatrix((1, 2), np.zeros((2, 2), dtype=int)))


def test_bad_counts_rejected():
    with pytest.raises(ValueError):
        ConfusionMatrix((1, 2), np.array([[1, -1], [0, 0]]))
    with pytest.raises(ValueError):
        ConfusionMatrix((1, 2, 3), np.zeros((2, 2)))


def test_performance_drop_fixtures():
    drop = performance_drop(HOME_WEIGHTED, AWAY_WEIGHTED, keys=tuple(HOME_WEIGHTED))
    for key, expected in REPORTED_DROP.items():
        assert within(drop[key], expected, 0.01)
    drop = performance_drop(RESNET_HOME, RESNET_FOREIGN, keys=tuple(RESNET_HOME))
    for key, expected in RESNET_DROP.items():
        assert within(drop[key], expected, 0.01)


def test_cross_report_drop_is_difference():
    home = aggregate(ConfusionMatrix(LABELS, np.diag([10] * 8)))
    away = aggregate(ConfusionMatrix(LABELS, FOREIGN_CONFUSION))
    cr = cross_report(home, away)
    assert cr.performance_drop["accuracy"] == pytest.approx(1 - 0.275)
    assert cr.performance_drop["weighted_f1"] == pytest.approx(1 - away.weighted_f1)
    text = format_cross_report(cr)
    assert "[performance drop]" in text and "weighted_f1" in text


def test_label_mapping_ranges():
    m = LabelMapping((1, 8), (1, 4))
    assert m.shared == (1, 2, 3, 4)
    assert m.union == tuple(range(1, 9))
    assert LabelMapping((1, 4), (3, 6)).union == (1, 2, 3, 4, 5, 6)


def test_confusion_tsv_round_trip():
    cm = ConfusionMatrix(LABELS, FOREIGN_CONFUSION)
    assert read_confusion(write_confusion(cm)) == cm


def test_report_dict_round_trip():
    report = aggregate(ConfusionMatrix(LABELS, FOREIGN_CONFUSION))
    import json

    again = EvalReport.from_dict(json.loads(dumps_report(report)))
    assert again == report


def test_format_report_layout():
    text = format_report(aggregate(ConfusionMatrix(LABELS, FOREIGN_CONFUSION)), digits=2)
    lines = text.splitlines()
    assert lines[0].split()[0] == "metric"
    assert "0.28" in lines[1] and "0.55" in lines[1]
    assert lines[-1].startswith("support") or lines[-1].strip().startswith("support")
    assert not math.isnan(float(lines[1].split()[1]))
