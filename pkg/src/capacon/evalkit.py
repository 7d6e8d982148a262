"""Detection scoring: IoU-threshold matching, precision/recall, AP and mAP.

Predictions are greedily matched to ground truth per frame in descending
confidence order; each prediction takes the highest-IoU unmatched truth box
at or above the IoU threshold, and duplicates count as false positives. AP
uses 101-point interpolation of the precision-recall curve; mAP@50-95
averages IoU thresholds 0.50 to 0.95 in steps of 0.05.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .errors import UndefinedMetric
from .ingest import DetectionBox, FrameRecord, ObjectClass, parse_frame_stream
from .tracker import iou

IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * k, 2) for k in range(10))
_RECALL_GRID = tuple(k / 100.0 for k in range(101))

FrameKey = tuple[str, int]
Box = tuple[float, float, float, float]


@dataclass(frozen=True)
class GroundTruthFrame:
    station_id: str
    frame_index: int
    boxes: tuple[tuple[ObjectClass, Box], ...]


@dataclass(frozen=True)
class MatchCounts:
    tp: int
    fp: int
    fn: int
    tn: int = 0  # carried for report parity; always 0 in detection scoring


@dataclass(frozen=True)
class PRPoint:
    confidence: float
    precision: float
    recall: float


@dataclass(frozen=True)
class PRCurve:
    """Cumulative precision/recall swept over descending confidence cuts.

    One point per distinct confidence value, so the curve is exactly the
    set of operating points reachable by thresholding.
    """

    points: tuple[PRPoint, ...]
    n_gt: int


@dataclass
class ClassEval:
    n_gt: int
    n_pred: int
    ap50: Optional[float] = None
    ap50_95: Optional[float] = None
    ap_by_threshold: dict[float, float] = field(default_factory=dict)
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    f1_confidence: Optional[float] = None


@dataclass
class EvalSummary:
    per_class: dict[str, ClassEval]
    map50: Optional[float] = None
    map50_95: Optional[float] = None
    mean_precision: Optional[float] = None
    mean_recall: Optional[float] = None


def precision(counts: MatchCounts) -> float:
    """TP / (TP + FP); undefined without predictions."""
    denom = counts.tp + counts.fp
    if denom == 0:
        raise UndefinedMetric("precision undefined: no predictions")
    return counts.tp / denom


def recall(counts: MatchCounts) -> float:
    """TP / (TP + FN); undefined without ground truth."""
    denom = counts.tp + counts.fn
    if denom == 0:
        raise UndefinedMetric("recall undefined: no ground truth")
    return counts.tp / denom


def match_frame(
    preds: Sequence[DetectionBox],
    gts: Sequence[Box],
    iou_t: float,
) -> tuple[list[bool], int]:
    """Label each prediction TP/FP against one frame's same-class truth.

    Returns (tp_flags aligned to the input order, count of unmatched truth
    boxes). Predictions are considered in descending confidence; ties keep
    input order.
    """
    if not 0.0 < iou_t <= 1.0:
        raise ValueError("iou_t must be in (0, 1]")
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)
    flags = [False] * len(preds)
    used = [False] * len(gts)
    matched = 0
    for i in order:
        box = preds[i].box
        best_v = 0.0
        best_j = -1
        for j, gt in enumerate(gts):
            if used[j]:
                continue
            v = iou(box, gt)
            if v > best_v:
                best_v = v
                best_j = j
        if best_j >= 0 and best_v >= iou_t:
            used[best_j] = True
            flags[i] = True
            matched += 1
    return flags, len(gts) - matched


def build_pr_curve(
    preds: Mapping[FrameKey, Sequence[DetectionBox]],
    gts: Mapping[FrameKey, Sequence[Box]],
    iou_t: float,
) -> PRCurve:
    """Corpus-wide curve for one class at one IoU threshold.

    All predictions are sorted globally by confidence, matched greedily
    within their frame, and accumulated; a point is emitted at each distinct
    confidence (tie groups collapse to their final cumulative counts).
    """
    n_gt = sum(len(v) for v in gts.values())
    scored: list[tuple[float, FrameKey, int]] = []
    for key, dets in preds.items():
        for idx, d in enumerate(dets):
            scored.append((-d.confidence, key, idx))
    scored.sort(key=lambda t: t[0])
    used: dict[FrameKey, list[bool]] = {}
    points: list[PRPoint] = []
    tp = 0
    fp = 0
    for rank, (neg_conf, key, idx) in enumerate(scored):
        det = preds[key][idx]
        gt_boxes = gts.get(key, ())
        frame_used = used.get(key)
        if frame_used is None:
            frame_used = [False] * len(gt_boxes)
            used[key] = frame_used
        best_v = 0.0
        best_j = -1
        for j, gt in enumerate(gt_boxes):
            if frame_used[j]:
                continue
            v = iou(det.box, gt)
            if v > best_v:
                best_v = v
                best_j = j
        if best_j >= 0 and best_v >= iou_t:
            frame_used[best_j] = True
            tp += 1
        else:
            fp += 1
        is_group_end = (
            rank + 1 == len(scored) or scored[rank + 1][0] != neg_conf
        )
        if is_group_end:
            points.append(
                PRPoint(
                    -neg_conf,
                    tp / (tp + fp),
                    tp / n_gt if n_gt else 0.0,
                )
            )
    return PRCurve(tuple(points), n_gt)


def average_precision(curve: PRCurve) -> float:
    """101-point interpolated AP.

    For each recall grid value the maximum precision at recall at or above
    it is averaged. No ground truth means the metric is undefined; ground
    truth with no predictions scores 0.
    """
    if curve.n_gt == 0:
        raise UndefinedMetric("average precision undefined: no ground truth")
    pts = curve.points
    if not pts:
        return 0.0
    n = len(pts)
    env = [0.0] * n  # env[i] = max precision from point i onward
    acc = 0.0
    for i in range(n - 1, -1, -1):
        p = pts[i].precision
        if p > acc:
            acc = p
        env[i] = acc
    recalls = [p.recall for p in pts]
    total = 0.0
    i = 0
    for r in _RECALL_GRID:
        while i < n and recalls[i] < r:
            i += 1
        if i == n:
            break
        total += env[i]
    return total / len(_RECALL_GRID)


def _split_by_class(
    frames: Mapping[FrameKey, Sequence[DetectionBox]], cls: ObjectClass
) -> dict[FrameKey, list[DetectionBox]]:
    return {
        key: [d for d in dets if d.cls is cls]
        for key, dets in frames.items()
    }


def map_suite(
    preds: Mapping[FrameKey, Sequence[DetectionBox]],
    gts: Mapping[FrameKey, Sequence[DetectionBox]],
) -> EvalSummary:
    """Full per-class and aggregate metric table for a corpus.

    Per-class precision/recall are reported at the confidence cut that
    maximizes F1 on the IoU=0.5 curve, alongside that cut. Classes without
    ground truth have undefined metrics and stay out of the averages.
    """
    per_class: dict[str, ClassEval] = {}
    for cls in ObjectClass:
        cls_preds = _split_by_class(preds, cls)
        cls_gts = {
            key: [d.box for d in dets if d.cls is cls]
            for key, dets in gts.items()
        }
        n_gt = sum(len(v) for v in cls_gts.values())
        n_pred = sum(len(v) for v in cls_preds.values())
        if n_gt == 0 and n_pred == 0:
            continue
        ce = ClassEval(n_gt=n_gt, n_pred=n_pred)
        per_class[cls.value] = ce
        if n_gt == 0:
            continue  # AP/recall undefined; FP-only classes stay absent
        for t in IOU_THRESHOLDS:
            curve = build_pr_curve(cls_preds, cls_gts, t)
            ce.ap_by_threshold[t] = average_precision(curve)
        ce.ap50 = ce.ap_by_threshold[0.5]
        ce.ap50_95 = sum(ce.ap_by_threshold.values()) / len(IOU_THRESHOLDS)
        curve50 = build_pr_curve(cls_preds, cls_gts, 0.5)
        best = None
        for pt in curve50.points:
            if pt.precision + pt.recall == 0:
                continue
            f1 = 2 * pt.precision * pt.recall / (pt.precision + pt.recall)
            if best is None or f1 > best[0] + 1e-15:
                best = (f1, pt)
        if best is not None:
            ce.f1 = best[0]
            ce.precision = best[1].precision
            ce.recall = best[1].recall
            ce.f1_confidence = best[1].confidence
        elif n_pred == 0:
            ce.recall = 0.0

    summary = EvalSummary(per_class=per_class)
    ap50s = [c.ap50 for c in per_class.values() if c.ap50 is not None]
    ap95s = [c.ap50_95 for c in per_class.values() if c.ap50_95 is not None]
    precs = [c.precision for c in per_class.values() if c.precision is not None]
    recs = [c.recall for c in per_class.values() if c.recall is not None]
    if ap50s:
        summary.map50 = sum(ap50s) / len(ap50s)
        summary.map50_95 = sum(ap95s) / len(ap95s)
    if precs:
        summary.mean_precision = sum(precs) / len(precs)
    if recs:
        summary.mean_recall = sum(recs) / len(recs)
    return summary


# --------------------------------------------------------------------------
# File-level helpers
# --------------------------------------------------------------------------


def frames_from_stream(records: Iterable[FrameRecord]) -> dict[FrameKey, list[DetectionBox]]:
    """Index stream records by (station, frame); repeated keys merge."""
    frames: dict[FrameKey, list[DetectionBox]] = {}
    for rec in records:
        frames.setdefault((rec.station_id, rec.frame_index), []).extend(rec.detections)
    return frames


def load_detection_file(path: str | Path, *, strict: bool = False) -> dict[FrameKey, list[DetectionBox]]:
    with open(path, "rb") as fh:
        return frames_from_stream(parse_frame_stream(fh, strict=strict))


EVAL_HEADER = ["model_tag", "class", "P", "R", "mAP50", "mAP50_95"]


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def write_eval_report(
    summary: EvalSummary, out_dir: str | Path, model_tag: str = "model"
) -> None:
    """Write eval.csv (per-class rows plus an 'all' aggregate) and eval.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for cls_name in sorted(summary.per_class):
        ce = summary.per_class[cls_name]
        rows.append(
            [model_tag, cls_name, _fmt(ce.precision), _fmt(ce.recall),
             _fmt(ce.ap50), _fmt(ce.ap50_95)]
        )
    rows.append(
        [model_tag, "all", _fmt(summary.mean_precision), _fmt(summary.mean_recall),
         _fmt(summary.map50), _fmt(summary.map50_95)]
    )
    with open(out / "eval.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EVAL_HEADER)
        writer.writerows(rows)
    payload = {
        "model_tag": model_tag,
        "classes": {
            name: {
                "n_gt": ce.n_gt,
                "n_pred": ce.n_pred,
                "precision": ce.precision,
                "recall": ce.recall,
                "f1": ce.f1,
                "f1_confidence": ce.f1_confidence,
                "ap50": ce.ap50,
                "ap50_95": ce.ap50_95,
                "ap_by_threshold": {f"{t:.2f}": v for t, v in ce.ap_by_threshold.items()},
            }
            for name, ce in sorted(summary.per_class.items())
        },
        "map50": summary.map50,
        "map50_95": summary.map50_95,
        "mean_precision": summary.mean_precision,
        "mean_recall": summary.mean_recall,
        "notes": "TN is always 0 in detection scoring; absent cells are undefined metrics.",
    }
    with open(out / "eval.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
