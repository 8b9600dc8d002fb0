"""Binarization, confusion counts and recall/F1/precision/accuracy.

Counts aggregate globally: tile counts add up, then scores are taken once.
When a mask pair holds no positives at all (``tp + fp + fn == 0``) precision,
recall and F1 are undefined; they come back as NaN with ``undefined`` set.
Otherwise a zero numerator gives a score of 0.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

TABLE_COLUMNS = ("network", "u", "s", "d", "Recall", "F1", "Precision", "Accuracy")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float
    accuracy: float
    undefined: bool = False

    def as_percent(self) -> dict:
        return {
            "Recall": 100 * self.recall,
            "F1": 100 * self.f1,
            "Precision": 100 * self.precision,
            "Accuracy": 100 * self.accuracy,
        }


def binarize(prob_map, threshold: float = 0.5) -> np.ndarray:
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    arr = prob_map.data if isinstance(prob_map, Tensor) else np.asarray(prob_map)
    return (arr >= threshold).astype(np.uint8)


def _as_binary(mask, name: str) -> np.ndarray:
    arr = np.asarray(mask)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} mask is not binary")
    return arr.astype(bool)


def confusion(pred, gt) -> ConfusionCounts:
    p, g = _as_binary(pred, "prediction"), _as_binary(gt, "ground-truth")
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, p.size - tp - fp - fn, fn)


def scores(c: ConfusionCounts) -> Scores:
    if c.total == 0:
        raise ValueError("cannot score an empty mask")
    accuracy = (c.tp + c.tn) / c.total
    if c.tp + c.fp + c.fn == 0:
        nan = math.nan
        return Scores(nan, nan, nan, accuracy, undefined=True)
    if c.tp == 0:
        return Scores(0.0, 0.0, 0.0, accuracy)
    precision = c.tp / (c.tp + c.fp)
    recall = c.tp / (c.tp + c.fn)
    f1 = 2 * precision * recall / (precision + recall)
    return Scores(precision, recall, f1, accuracy)


def evaluate(preds, gts) -> tuple:
    """Global scores plus per-tile counts for paired prediction/label masks."""
    tiles = [confusion(p, g) for p, g in zip(preds, gts)]
    total = sum(tiles, ConfusionCounts())
    return scores(total), tiles


def table_row(network: str, s: Scores, glimpse=None) -> dict:
    u, sd, d = (glimpse if glimpse is not None else ("", "", ""))
    row = {"network": network, "u": u, "s": sd, "d": d}
    row.update({k: round(v, 2) for k, v in s.as_percent().items()})
    return row


def table_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in TABLE_COLUMNS})
    return buf.getvalue()


def table_text(rows) -> str:
    lines = ["\t".join(TABLE_COLUMNS)]
    for row in rows:
        lines.append("\t".join(str(row.get(k, "")) for k in TABLE_COLUMNS))
    return "\n".join(lines) + "\n"


def read_table_csv(text: str) -> list:
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        for k in ("Recall", "F1", "Precision", "Accuracy"):
            row[k] = float(row[k])
        rows.append(row)
    return rows
