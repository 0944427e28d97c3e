"""Segmentation and calibration metrics.

Everything is built on two mergeable accumulators:

* ConfusionMatrix - k x k integer counts (ground truth rows, prediction
  columns); integer arithmetic, so accumulation commutes and associates
  exactly regardless of dataset order or partitioning.
* ReliabilityBins - equal-width confidence bins over (0, 1] carrying
  (count, confidence sum, correct count).  Confidence sums use
  compensated accumulation so streaming and one-shot evaluation agree
  to ~1 ulp.

All reported metrics are percentages in [0, 100].
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

__all__ = [
    "IGNORE_LABEL",
    "ConfusionMatrix",
    "accumulate_confusion",
    "iou_per_class",
    "miou",
    "ood_bg_iou",
    "ReliabilityBins",
    "ece",
    "reliability_table",
    "MetricsReport",
]

IGNORE_LABEL = 255


class ConfusionMatrix:
    """k x k pixel counts; counts[g][p] = pixels with truth g predicted p."""

    def __init__(self, num_classes: int):
        if num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {num_classes}")
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def total(self) -> int:
        """Number of scored (non-ignored) pixels accumulated so far."""
        return int(self.counts.sum())

    def add(
        self, pred: np.ndarray, gt: np.ndarray, ignore_label: int = IGNORE_LABEL
    ) -> "ConfusionMatrix":
        """Accumulate one prediction/ground-truth pair of label fields."""
        k = self.num_classes
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
        if pred.size and (pred.min() < 0 or pred.max() >= k):
            raise ValueError(f"prediction labels must lie in [0, {k - 1}]")
        scored = gt != ignore_label
        gs = gt[scored]
        if gs.size and (gs.min() < 0 or gs.max() >= k):
            raise ValueError(
                f"ground-truth labels must lie in [0, {k - 1}] or equal "
                f"ignore_label={ignore_label}"
            )
        flat = gs.astype(np.int64) * k + pred[scored].astype(np.int64)
        self.counts += np.bincount(flat, minlength=k * k).reshape(k, k)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices of different sizes")
        self.counts += other.counts
        return self


def accumulate_confusion(
    pred: np.ndarray,
    gt: np.ndarray,
    num_classes: int,
    ignore_label: int = IGNORE_LABEL,
) -> ConfusionMatrix:
    """Build a fresh ConfusionMatrix from one prediction/truth pair."""
    return ConfusionMatrix(num_classes).add(pred, gt, ignore_label=ignore_label)


def iou_per_class(cm: ConfusionMatrix) -> List[Optional[float]]:
    """IoU_c = TP / (TP + FP + FN) per class; None when the class has no
    support in either ground truth or prediction (0/0 skipped)."""
    counts = cm.counts
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0).astype(np.float64) - tp
    fn = counts.sum(axis=1).astype(np.float64) - tp
    denom = tp + fp + fn
    return [
        float(tp[c] / denom[c]) if denom[c] > 0 else None
        for c in range(cm.num_classes)
    ]


def miou(cm: ConfusionMatrix) -> float:
    """Mean IoU over classes with defined IoU, as a percentage."""
    defined = [v for v in iou_per_class(cm) if v is not None]
    if not defined:
        raise ValueError("mIOU is undefined: no class has support")
    return 100.0 * math.fsum(defined) / len(defined)


def ood_bg_iou(pred: np.ndarray) -> float:
    """Background-class IoU against an all-background ground truth, in percent.

    With an all-background truth there are no background false positives,
    so the IoU reduces to the fraction of pixels predicted background.
    Evaluated as 100 * (count / size) so it matches the general
    confusion-matrix IoU bit for bit.
    """
    arr = np.asarray(pred)
    if arr.size == 0:
        raise ValueError("prediction field must not be empty")
    if arr.min() < 0:
        raise ValueError("prediction labels must be non-negative")
    return 100.0 * (float(np.count_nonzero(arr == 0)) / arr.size)


def _bin_indices(confidences: np.ndarray, num_bins: int) -> np.ndarray:
    # Bin m covers (m/M, (m+1)/M]; confidence 0 is assigned to bin 0.
    idx = np.ceil(confidences * num_bins).astype(np.int64) - 1
    return np.clip(idx, 0, num_bins - 1)


class ReliabilityBins:
    """Streaming accumulator for calibration statistics.

    M equal-width bins over (0, 1].  Counts are exact integers; the
    per-bin confidence sums use exact per-chunk summation plus a
    compensated running total, so results are stable under any chunking
    or merge order.
    """

    def __init__(self, num_bins: int = 15):
        if num_bins < 1:
            raise ValueError(f"need at least one bin, got {num_bins}")
        self.num_bins = num_bins
        self.count = np.zeros(num_bins, dtype=np.int64)
        self.correct_count = np.zeros(num_bins, dtype=np.int64)
        self._conf_sum = np.zeros(num_bins, dtype=np.float64)
        self._conf_comp = np.zeros(num_bins, dtype=np.float64)

    def _accumulate(self, m: int, value: float) -> None:
        # Neumaier compensated addition into bin m.
        s = self._conf_sum[m]
        t = s + value
        if abs(s) >= abs(value):
            self._conf_comp[m] += (s - t) + value
        else:
            self._conf_comp[m] += (value - t) + s
        self._conf_sum[m] = t

    def add(self, confidences: np.ndarray, correct: np.ndarray) -> "ReliabilityBins":
        """Accumulate a chunk of (confidence, correct) pairs."""
        conf = np.asarray(confidences, dtype=np.float64).ravel()
        corr = np.asarray(correct, dtype=bool).ravel()
        if conf.size != corr.size:
            raise ValueError(
                f"length mismatch: {conf.size} confidences vs {corr.size} outcomes"
            )
        if conf.size == 0:
            return self
        if conf.min() < 0.0 or conf.max() > 1.0:
            raise ValueError("confidences must lie in [0, 1]")
        idx = _bin_indices(conf, self.num_bins)
        self.count += np.bincount(idx, minlength=self.num_bins)
        self.correct_count += np.bincount(idx[corr], minlength=self.num_bins)
        for m in np.unique(idx):
            self._accumulate(int(m), math.fsum(conf[idx == m]))
        return self

    def merge(self, other: "ReliabilityBins") -> "ReliabilityBins":
        if other.num_bins != self.num_bins:
            raise ValueError("cannot merge reliability bins of different widths")
        self.count += other.count
        self.correct_count += other.correct_count
        for m in range(self.num_bins):
            self._accumulate(m, other._conf_sum[m] + other._conf_comp[m])
        return self

    def total(self) -> int:
        return int(self.count.sum())

    def confidence_sum(self) -> np.ndarray:
        return self._conf_sum + self._conf_comp

    def ece(self) -> float:
        """Expected calibration error in percent: sum_m (|B_m|/n) |acc_m - conf_m|."""
        n = self.total()
        if n == 0:
            raise ValueError("no samples accumulated")
        conf_sum = self.confidence_sum()
        terms = []
        for m in range(self.num_bins):
            c = int(self.count[m])
            if c == 0:
                continue
            gap = abs(self.correct_count[m] / c - conf_sum[m] / c)
            terms.append(c * gap)
        return 100.0 * math.fsum(terms) / n


def ece(
    confidences: np.ndarray, correct: np.ndarray, num_bins: int = 15
) -> float:
    """One-shot expected calibration error in percent.

    Bins are equal-width over (0, 1]; confidence 0 falls into bin 0.
    """
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    if conf.size == 0:
        raise ValueError("need at least one sample")
    return ReliabilityBins(num_bins).add(conf, correct).ece()


@dataclass(frozen=True)
class ReliabilityRow:
    bin_lo: float
    bin_hi: float
    count: int
    mean_confidence: float
    accuracy: float


def reliability_table(bins: ReliabilityBins) -> List[ReliabilityRow]:
    """One row per non-empty bin; the count-weighted gaps reproduce ece()."""
    conf_sum = bins.confidence_sum()
    rows = []
    for m in range(bins.num_bins):
        c = int(bins.count[m])
        if c == 0:
            continue
        rows.append(
            ReliabilityRow(
                bin_lo=m / bins.num_bins,
                bin_hi=(m + 1) / bins.num_bins,
                count=c,
                mean_confidence=float(conf_sum[m]) / c,
                accuracy=int(bins.correct_count[m]) / c,
            )
        )
    return rows


def _check_percent(name: str, value: float) -> float:
    if not (0.0 <= value <= 100.0):
        raise ValueError(f"{name} must lie in [0, 100], got {value}")
    return float(value)


@dataclass
class MetricsReport:
    """Evaluation summary for one checkpoint over one or more datasets.

    Percentages keyed by dataset id; ``per_class_iou`` holds fractions in
    [0, 1] (or None for classes without support) for labelled datasets.
    """

    metadata: dict
    miou: dict = field(default_factory=dict)
    bg_iou: dict = field(default_factory=dict)
    ece: dict = field(default_factory=dict)
    expected_nd: dict = field(default_factory=dict)
    per_class_iou: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for group_name in ("miou", "bg_iou", "ece", "expected_nd"):
            for dataset, value in getattr(self, group_name).items():
                _check_percent(f"{group_name}[{dataset}]", value)
        for dataset, ious in self.per_class_iou.items():
            for c, v in enumerate(ious):
                if v is not None and not (0.0 <= v <= 1.0):
                    raise ValueError(
                        f"per_class_iou[{dataset}][{c}] must lie in [0, 1], got {v}"
                    )

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "miou": self.miou,
            "bg_iou": self.bg_iou,
            "ece": self.ece,
            "expected_nd": self.expected_nd,
            "per_class_iou": self.per_class_iou,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricsReport":
        return cls(
            metadata=payload["metadata"],
            miou=payload["miou"],
            bg_iou=payload["bg_iou"],
            ece=payload["ece"],
            expected_nd=payload["expected_nd"],
            per_class_iou=payload["per_class_iou"],
        )

    def metric_rows(self) -> List[tuple]:
        """(metric, dataset, value) rows in stable order."""
        rows = []
        for group_name in ("miou", "bg_iou", "ece", "expected_nd"):
            group = getattr(self, group_name)
            for dataset in sorted(group):
                rows.append((group_name, dataset, group[dataset]))
        return rows

    def write_csv(self, path: Union[str, Path], preamble: Optional[str] = None) -> None:
        with open(path, "w", newline="") as fh:
            if preamble:
                fh.write(f"# {preamble}\n")
            writer = csv.writer(fh)
            writer.writerow(["metric", "dataset", "value"])
            for metric, dataset, value in self.metric_rows():
                writer.writerow([metric, dataset, repr(float(value))])


def write_reliability_csv(
    path: Union[str, Path], bins: ReliabilityBins, preamble: Optional[str] = None
) -> None:
    """Reliability table as CSV, one row per non-empty bin."""
    with open(path, "w", newline="") as fh:
        if preamble:
            fh.write(f"# {preamble}\n")
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count", "mean_confidence", "accuracy"])
        for row in reliability_table(bins):
            writer.writerow(
                [
                    repr(row.bin_lo),
                    repr(row.bin_hi),
                    row.count,
                    repr(row.mean_confidence),
                    repr(row.accuracy),
                ]
            )
