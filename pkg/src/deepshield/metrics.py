"""Binary-classification metrics: confusion counts, F1, ROC curve, AUC.

The fake class is positive throughout. ROC thresholds sweep the distinct
score values in descending order (plus a sentinel above the maximum) with
classification at score >= threshold, so the curve always starts at (0,0)
and ends at (1,1); AUC is the trapezoidal area, which equals the pairwise
Mann-Whitney statistic with half credit for ties.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError, MetricError
from .videoinfer import VideoVerdict


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    n_items: int
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "n_items": self.n_items,
            "flags": list(self.flags),
        }


def confusion(preds: Sequence[int], labels: Sequence[int]) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) with fake (1) as the positive class."""
    if len(preds) != len(labels):
        raise InputError(f"length mismatch: {len(preds)} predictions vs {len(labels)} labels")
    if len(preds) == 0:
        raise InputError("confusion requires at least one item")
    tp = fp = tn = fn = 0
    for p, y in zip(preds, labels):
        if p not in (0, 1) or y not in (0, 1):
            raise InputError(f"confusion requires binary values, got pred={p!r} label={y!r}")
        if p == 1 and y == 1:
            tp += 1
        elif p == 1 and y == 0:
            fp += 1
        elif p == 0 and y == 0:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


def f1_score(tp: int, fp: int, fn: int) -> tuple[float, bool]:
    """(f1, degenerate) where degenerate marks an all-zero denominator."""
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0, True
    return 2 * tp / denom, False


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> list[RocPoint]:
    if len(scores) != len(labels):
        raise InputError(f"length mismatch: {len(scores)} scores vs {len(labels)} labels")
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != len(y):
        raise InputError("roc_curve labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC/AUC undefined: only one class present")
    thresholds = np.unique(s)[::-1]
    points = [RocPoint(0.0, 0.0, float(thresholds[0] + 1.0))]
    for t in thresholds:
        pred = s >= t
        tp = int((pred & (y == 1)).sum())
        fp = int((pred & (y == 0)).sum())
        points.append(RocPoint(fp / n_neg, tp / n_pos, float(t)))
    return points


def auc(points: Sequence[RocPoint]) -> float:
    """Trapezoidal area under the ROC curve."""
    if len(points) < 2:
        raise InputError("auc requires at least two curve points")
    area = 0.0
    for a, b in zip(points[:-1], points[1:]):
        area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0
    return float(area)


def auc_from_scores(scores: Sequence[float], labels: Sequence[int]) -> float:
    return auc(roc_curve(scores, labels))


def evaluate_run(
    verdicts: Sequence[VideoVerdict],
    labels: dict[str, int],
    with_roc: bool = True,
) -> tuple[MetricsReport, list[RocPoint]]:
    """Video-level report; ROC/AUC from each verdict's continuous score."""
    if not verdicts:
        raise InputError("evaluate_run requires at least one verdict")
    for v in verdicts:
        if v.video_id not in labels:
            raise InputError(f"no label for predicted video {v.video_id!r}")
    y = [labels[v.video_id] for v in verdicts]
    preds = [1 if v.verdict == "fake" else 0 for v in verdicts]
    tp, fp, tn, fn = confusion(preds, y)
    n = len(verdicts)
    accuracy = (tp + tn) / n
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1, degenerate = f1_score(tp, fp, fn)
    flags: list[str] = []
    if degenerate:
        flags.append("f1_degenerate")
    if tp + fp == 0:
        flags.append("precision_degenerate")
    if tp + fn == 0:
        flags.append("recall_degenerate")
    roc: list[RocPoint] = []
    auc_value: float | None = None
    if with_roc:
        scores = [v.score for v in verdicts]
        try:
            roc = roc_curve(scores, y)
            auc_value = auc(roc)
        except MetricError:
            flags.append("auc_single_class")
    report = MetricsReport(
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        auc=auc_value,
        n_items=n,
        flags=flags,
    )
    return report, roc


def emit(report: MetricsReport, roc: Sequence[RocPoint], out_dir: str | Path) -> tuple[Path, Path]:
    """Write report.json and roc.csv; both byte-deterministic."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    roc_path = out_dir / "roc.csv"
    lines = ["fpr,tpr,threshold"]
    for p in roc:
        lines.append(f"{p.fpr!r},{p.tpr!r},{p.threshold!r}")
    roc_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report_path, roc_path
