"""Segment-level and event-level F1 for audio, visual and audio-visual events.

Per video, TP/FP/FN counts are collected for each event type; F1 is computed
per video and averaged over the videos where that type has any prediction or
ground truth. Event-level matching pairs same-class intervals whose temporal
IoU reaches the threshold, each interval used at most once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .tensor import ShapeError

TYPES = ("audio", "visual", "av")
LEVELS = ("segment", "event")


class EventInterval(NamedTuple):
    class_index: int
    start: int  # inclusive
    end: int  # inclusive

    @property
    def length(self) -> int:
        return self.end - self.start + 1


class Counts(NamedTuple):
    tp: int
    fp: int
    fn: int

    def __add__(self, other):  # type: ignore[override]
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def empty(self) -> bool:
        return self.tp + self.fp + self.fn == 0


def f_score(c: Counts) -> float | None:
    """2TP / (2TP + FP + FN); None when there is nothing to score."""
    denom = 2 * c.tp + c.fp + c.fn
    return None if denom == 0 else 2 * c.tp / denom


def binarize(P, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(P) >= threshold).astype(np.int64)


def derive_av(a, v) -> np.ndarray:
    a, v = np.asarray(a), np.asarray(v)
    if a.shape != v.shape:
        raise ShapeError(f"derive_av: shape mismatch {a.shape} vs {v.shape}")
    return (a.astype(bool) & v.astype(bool)).astype(np.int64)


def extract_events(column, class_index: int = 0) -> list[EventInterval]:
    """Maximal runs of ones as inclusive intervals, in temporal order."""
    col = np.asarray(column).astype(bool).astype(np.int8)
    padded = np.concatenate(([0], col, [0]))
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [EventInterval(class_index, int(s), int(e)) for s, e in zip(starts, ends)]


def interval_iou(a: EventInterval, b: EventInterval) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    return inter / (a.length + b.length - inter)


def _check(pred, gt, op):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"{op}: shape mismatch {pred.shape} vs {gt.shape}")
    return pred.astype(bool), gt.astype(bool)


def segment_counts(pred, gt) -> Counts:
    p, g = _check(pred, gt, "segment_counts")
    return Counts(int((p & g).sum()), int((p & ~g).sum()), int((~p & g).sum()))


def match_intervals(preds: list[EventInterval], gts: list[EventInterval],
                    threshold: float = 0.5) -> int:
    """Greedy one-to-one matching by descending IoU; returns the match count.

    Ties go to the earlier ground-truth start, then the earlier prediction start.
    """
    pairs = []
    for gi, g in enumerate(gts):
        for pi, p in enumerate(preds):
            iou = interval_iou(p, g)
            if iou >= threshold:
                pairs.append((-iou, g.start, p.start, gi, pi))
    pairs.sort()
    used_g, used_p = set(), set()
    for _, _, _, gi, pi in pairs:
        if gi in used_g or pi in used_p:
            continue
        used_g.add(gi)
        used_p.add(pi)
    return len(used_g)


def event_counts(pred, gt, miou_threshold: float = 0.5) -> Counts:
    if not 0 < miou_threshold <= 1:
        raise ValueError(f"IoU threshold must be in (0, 1], got {miou_threshold}")
    p, g = _check(pred, gt, "event_counts")
    tp = fp = fn = 0
    for c in range(p.shape[1]):
        pe = extract_events(p[:, c], c)
        ge = extract_events(g[:, c], c)
        m = match_intervals(pe, ge, miou_threshold)
        tp += m
        fp += len(pe) - m
        fn += len(ge) - m
    return Counts(tp, fp, fn)


def segment_f1(pred, gt) -> float | None:
    return f_score(segment_counts(pred, gt))


def event_f1(pred, gt, miou_threshold: float = 0.5) -> float | None:
    return f_score(event_counts(pred, gt, miou_threshold))


@dataclass
class VideoScores:
    """Per-video counts keyed by level then event type."""

    video_id: str
    counts: dict[str, dict[str, Counts]]


def score_video(pred_a, pred_v, gt_a, gt_v, video_id: str = "",
                miou_threshold: float = 0.5) -> VideoScores:
    preds = {"audio": np.asarray(pred_a), "visual": np.asarray(pred_v)}
    gts = {"audio": np.asarray(gt_a), "visual": np.asarray(gt_v)}
    preds["av"] = derive_av(preds["audio"], preds["visual"])
    gts["av"] = derive_av(gts["audio"], gts["visual"])
    counts = {
        "segment": {k: segment_counts(preds[k], gts[k]) for k in TYPES},
        "event": {k: event_counts(preds[k], gts[k], miou_threshold) for k in TYPES},
    }
    return VideoScores(video_id, counts)


def _mean_defined(values: Iterable[float | None]) -> float:
    vals = [v for v in values if v is not None]
    # no video carries this type at all: vacuously perfect
    return float(np.mean(vals)) if vals else 1.0


@dataclass
class MetricReport:
    subset: str
    video_count: int
    segment: dict[str, float] = field(default_factory=dict)
    event: dict[str, float] = field(default_factory=dict)

    def level(self, name: str) -> dict[str, float]:
        return self.segment if name == "segment" else self.event

    def event_average(self) -> float:
        """Mean of the five event-level numbers (A, V, AV, Type@AV, Event@AV)."""
        return float(np.mean([self.event[k] for k in (*TYPES, "type_at_av", "event_at_av")]))

    def as_dict(self) -> dict:
        return {"subset": self.subset, "video_count": self.video_count,
                "segment": dict(self.segment), "event": dict(self.event)}


def aggregate(videos: list[VideoScores], subset: str = "all") -> MetricReport:
    if not videos:
        raise ValueError("aggregate needs at least one video")
    report = MetricReport(subset, len(videos))
    for level in LEVELS:
        out = report.level(level)
        for t in TYPES:
            out[t] = _mean_defined(f_score(v.counts[level][t]) for v in videos)
        out["type_at_av"] = (out["audio"] + out["visual"] + out["av"]) / 3.0
        out["event_at_av"] = _mean_defined(
            f_score(v.counts[level]["audio"] + v.counts[level]["visual"]) for v in videos
        )
    return report


def empty_report(subset: str) -> MetricReport:
    """Placeholder for a subset with no videos; every score is zero."""
    zero = {k: 0.0 for k in (*TYPES, "type_at_av", "event_at_av")}
    return MetricReport(subset, 0, dict(zero), dict(zero))


def is_overlapping(gt_a, gt_v) -> bool:
    return bool((np.asarray(gt_a).sum(axis=1) >= 2).any() or (np.asarray(gt_v).sum(axis=1) >= 2).any())


def split_overlapping(records) -> tuple[list[str], list[str]]:
    """Partition video ids by whether any segment holds two or more events."""
    over, rest = [], []
    for rec in records:
        (over if is_overlapping(rec.gt_audio, rec.gt_visual) else rest).append(rec.id)
    return over, rest
