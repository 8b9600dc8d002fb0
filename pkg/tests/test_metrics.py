import math

import numpy as np
import pytest

from siamcd.metrics import (
    TABLE_COLUMNS,
    ConfusionCounts,
    binarize,
    confusion,
    evaluate,
    read_table_csv,
    scores,
    table_csv,
    table_row,
    table_text,
)
from siamcd.tensor import Tensor


def counting_oracle(pred, gt):
    c = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        key = ("t" if p == g else "f") + ("p" if p else "n")
        c[key] += 1
    return ConfusionCounts(**c)


def test_worked_example():
    s = scores(ConfusionCounts(tp=70, fp=30, tn=870, fn=30))
    assert (s.precision, s.recall, s.f1, s.accuracy) == pytest.approx((0.70, 0.70, 0.70, 0.94), abs=1e-12)
    assert not s.undefined
    pct = s.as_percent()
    assert pct["F1"] == pytest.approx(70.0) and pct["Accuracy"] == pytest.approx(94.0)


def test_perfect_and_disagreeing(rng):
    gt = (rng.uniform(size=(16, 16)) > 0.8).astype(np.uint8)
    k = int(gt.sum())
    assert confusion(gt, gt) == ConfusionCounts(k, 0, gt.size - k, 0)
    s = scores(confusion(gt, gt))
    assert (s.precision, s.recall, s.f1, s.accuracy) == (1.0, 1.0, 1.0, 1.0)
    c = confusion(1 - gt, gt)
    assert c.tp == 0 and c.tn == 0


def test_zero_numerator_convention():
    s = scores(ConfusionCounts(tp=0, fp=5, tn=10, fn=3))
    assert (s.precision, s.recall, s.f1) == (0.0, 0.0, 0.0)
    assert not s.undefined


def test_all_negative_is_flagged():
    s = scores(confusion(np.zeros((4, 4), np.uint8), np.zeros((4, 4), np.uint8)))
    assert s.undefined and math.isnan(s.f1) and math.isnan(s.precision)
    assert s.accuracy == 1.0


def test_empty_counts_error():
    with pytest.raises(ValueError):
        scores(ConfusionCounts())


@pytest.mark.parametrize("seed", range(10))
def test_counting_oracle(seed):
    rng = np.random.default_rng(seed)
    pred = (rng.uniform(size=(16, 16)) > 0.5).astype(np.uint8)
    gt = (rng.uniform(size=(16, 16)) > 0.7).astype(np.uint8)
    assert confusion(pred, gt) == counting_oracle(pred, gt)


def test_confusion_errors():
    with pytest.raises(ValueError, match="binary"):
        confusion(np.array([0, 2]), np.array([0, 1]))
    with pytest.raises(ValueError):
        confusion(np.zeros(3), np.zeros(4))


def test_binarize_rules(rng):
    assert binarize(np.full((3, 3), 0.9)).all()
    assert binarize(np.array([0.5]), 0.5)[0] == 1
    assert binarize(Tensor([0.2, 0.7])).tolist() == [0, 1]
    prob = rng.uniform(size=(32, 32))
    counts = [int(binarize(prob, t).sum()) for t in np.linspace(0.05, 0.95, 19)]
    assert counts == sorted(counts, reverse=True)
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            binarize(prob, bad)


def test_global_aggregation_is_associative(rng):
    preds = [(rng.uniform(size=(8, 8)) > 0.5).astype(np.uint8) for _ in range(5)]
    gts = [(rng.uniform(size=(8, 8)) > 0.6).astype(np.uint8) for _ in range(5)]
    total, tiles = evaluate(preds, gts)
    assert len(tiles) == 5
    whole = scores(confusion(np.concatenate(preds), np.concatenate(gts)))
    assert total == whole
    left = sum(tiles[:2], ConfusionCounts()) + sum(tiles[2:], ConfusionCounts())
    assert scores(left) == whole


def test_harmonic_mean_bounds_and_relabeling(rng):
    for _ in range(1000):
        tp, fp, tn, fn = (int(v) for v in rng.integers(1, 500, size=4))
        s = scores(ConfusionCounts(tp, fp, tn, fn))
        assert min(s.precision, s.recall) - 1e-12 <= s.f1 <= max(s.precision, s.recall) + 1e-12
        r = scores(ConfusionCounts(tn, fn, tp, fp))
        assert r.accuracy == pytest.approx(s.accuracy, abs=1e-15)


def test_relabeling_changes_precision():
    s = scores(ConfusionCounts(10, 5, 80, 2))
    r = scores(ConfusionCounts(80, 2, 10, 5))
    assert s.precision != r.precision and s.recall != r.recall


def test_false_alarms_and_misses_monotone():
    prec = [scores(ConfusionCounts(20, fp, 100, 5)).precision for fp in range(0, 30)]
    rec = [scores(ConfusionCounts(20, 5, 100, fn)).recall for fn in range(0, 30)]
    assert all(a > b for a, b in zip(prec, prec[1:]))
    assert all(a > b for a, b in zip(rec, rec[1:]))


def test_table_round_trip():
    rows = [
        table_row("FC-Siam-conc", scores(ConfusionCounts(70, 30, 870, 30))),
        table_row("FC-Siam-diff-Att", scores(ConfusionCounts(50, 10, 900, 40)), (0.1, 0.5, 2.0)),
    ]
    text = table_csv(rows)
    assert text.splitlines()[0].split(",") == list(TABLE_COLUMNS)
    back = read_table_csv(text)
    assert [r["network"] for r in back] == ["FC-Siam-conc", "FC-Siam-diff-Att"]
    for r, b in zip(rows, back):
        for k in ("Recall", "F1", "Precision", "Accuracy"):
            assert b[k] == r[k]
    assert back[1]["u"] == "0.1" and back[0]["u"] == ""
    assert table_text(rows).splitlines()[0].split("\t") == list(TABLE_COLUMNS)
