"""
evaluate_segments.py

Detection quality against manually labelled ad spans.

- Time level: precision and recall over seconds (overlap of the span unions).
- Segment level: greedy one-to-one matching of predicted and gold spans in descending IoU order; a pair
  counts when its IoU reaches the threshold.

Empty-set conventions: no predictions and no gold gives 1/1/1; no predictions against gold gives
precision 1 and recall 0; predictions against no gold give precision 0 and recall 1. F1 is 0 when P+R = 0.
"""

import json
import logging
from dataclasses import dataclass
from enum import Enum

import pandas as pd

from utils.errors import MalformedInput, SpanOutOfRange

logger = logging.getLogger(__name__)

Interval = tuple[float, float]
RANGE_EPS = 1e-6
METRIC_COLUMNS = ["video_id", "time_precision", "time_recall", "time_f1",
                  "segment_precision", "segment_recall", "segment_f1", "iou_threshold"]


class MetricLevel(str, Enum):
    TIME = "time"
    SEGMENT = "segment"


@dataclass(frozen=True)
class GoldSpan:
    video_id: str
    start: float
    end: float

    def __post_init__(self):
        if not self.end > self.start:
            raise MalformedInput(f"Gold span for {self.video_id} has end {self.end} <= start {self.start}.")


@dataclass(frozen=True)
class EvalMetrics:
    precision: float
    recall: float
    f1: float
    level: MetricLevel
    iou_threshold: float | None = None
    # numerators and denominators, kept for corpus-level micro averages
    matched_predicted: float = 0.0
    predicted_total: float = 0.0
    matched_gold: float = 0.0
    gold_total: float = 0.0


def safe_divide(numerator, denominator, default: float):
    """Performs safe division. Returns `default` if denominator is 0."""
    return numerator / denominator if denominator != 0 else default


def f1_score(precision: float, recall: float) -> float:
    return safe_divide(2 * precision * recall, precision + recall, 0.0)


def _metrics(matched_p: float, total_p: float, matched_g: float, total_g: float, level: MetricLevel,
             iou_threshold: float | None = None) -> EvalMetrics:
    if total_p == 0 and total_g == 0:
        precision = recall = 1.0
    else:
        precision = safe_divide(matched_p, total_p, 1.0)
        recall = safe_divide(matched_g, total_g, 1.0)
    return EvalMetrics(precision, recall, f1_score(precision, recall), level, iou_threshold,
                       matched_p, total_p, matched_g, total_g)


def union_intervals(intervals: list[Interval]) -> list[Interval]:
    merged: list[list[float]] = []
    for start, end in sorted(intervals):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(s, e) for s, e in merged]


def total_seconds(intervals: list[Interval]) -> float:
    return sum(e - s for s, e in union_intervals(intervals))


def overlap_seconds(a: list[Interval], b: list[Interval]) -> float:
    a, b = union_intervals(a), union_intervals(b)
    i = j = 0
    overlap = 0.0
    while i < len(a) and j < len(b):
        overlap += max(0.0, min(a[i][1], b[j][1]) - max(a[i][0], b[j][0]))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return overlap


def interval_iou(a: Interval, b: Interval) -> float:
    intersection = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return safe_divide(intersection, union, 0.0)


def _check_range(spans: list[Interval], duration: float, label: str) -> None:
    for start, end in spans:
        if start < 0 or end > duration + RANGE_EPS or end <= start:
            raise SpanOutOfRange(f"{label} span [{start}, {end}) is not within [0, {duration}].")


def time_level_metrics(predicted: list[Interval], gold: list[Interval], duration: float) -> EvalMetrics:
    _check_range(predicted, duration, "Predicted")
    _check_range(gold, duration, "Gold")
    overlap = overlap_seconds(predicted, gold)
    return _metrics(overlap, total_seconds(predicted), overlap, total_seconds(gold), MetricLevel.TIME)


def segment_level_metrics(predicted: list[Interval], gold: list[Interval], iou_threshold: float = 0.5) -> EvalMetrics:
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must be in (0, 1].")
    pairs = sorted(
        ((interval_iou(p, g), i, j) for i, p in enumerate(predicted) for j, g in enumerate(gold)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    used_p: set[int] = set()
    used_g: set[int] = set()
    for iou, i, j in pairs:
        if iou < iou_threshold:
            break
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
    matches = len(used_p)
    return _metrics(matches, len(predicted), matches, len(gold), MetricLevel.SEGMENT, iou_threshold)


def corpus_metrics(per_video: list[EvalMetrics]) -> EvalMetrics:
    """Micro average: sums matched and total seconds (or segments) over videos of one level."""
    if not per_video:
        raise ValueError("corpus_metrics needs at least one video.")
    level = per_video[0].level
    return _metrics(sum(m.matched_predicted for m in per_video), sum(m.predicted_total for m in per_video),
                    sum(m.matched_gold for m in per_video), sum(m.gold_total for m in per_video),
                    level, per_video[0].iou_threshold)


def load_gold(path: str) -> dict[str, list[GoldSpan]]:
    """Reads the gold JSONL: one `{"video_id": ..., "spans": [{"start": s, "end": s}]}` object per line."""
    gold: dict[str, list[GoldSpan]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                video_id = str(doc["video_id"])
                spans = sorted((GoldSpan(video_id, float(s["start"]), float(s["end"])) for s in doc["spans"]),
                               key=lambda s: s.start)
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise MalformedInput(f"{path}:{line_number}: invalid gold record ({e}).") from e
            for prev, curr in zip(spans, spans[1:]):
                if curr.start < prev.end:
                    raise MalformedInput(f"{path}:{line_number}: overlapping gold spans for {video_id}.")
            gold.setdefault(video_id, []).extend(spans)
    return gold


def evaluate_corpus(predicted: dict[str, list[Interval]], gold: dict[str, list[GoldSpan]],
                    durations: dict[str, float], iou_threshold: float = 0.5) -> pd.DataFrame:
    """
    One row per gold video with time- and segment-level metrics, plus an `ALL` row of micro averages.
    Gold videos without a prediction entry are skipped.
    """
    rows = []
    time_metrics: list[EvalMetrics] = []
    segment_metrics: list[EvalMetrics] = []
    for video_id in gold:
        if video_id not in predicted:
            logger.warning(f"No detection for gold video {video_id}; skipped.")
            continue
        gold_spans = [(s.start, s.end) for s in gold[video_id]]
        t = time_level_metrics(predicted[video_id], gold_spans, durations[video_id])
        s = segment_level_metrics(predicted[video_id], gold_spans, iou_threshold)
        time_metrics.append(t)
        segment_metrics.append(s)
        rows.append([video_id, t.precision, t.recall, t.f1, s.precision, s.recall, s.f1, iou_threshold])
    if rows:
        t, s = corpus_metrics(time_metrics), corpus_metrics(segment_metrics)
        rows.append(["ALL", t.precision, t.recall, t.f1, s.precision, s.recall, s.f1, iou_threshold])
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


def format_metrics(metrics: EvalMetrics) -> str:
    threshold = f" at IoU {metrics.iou_threshold:.2f}" if metrics.iou_threshold is not None else ""
    return (f"{metrics.level.value.capitalize()}-level metrics{threshold}:\n"
            f"Precision: {metrics.precision:.3f}\n"
            f"Recall:    {metrics.recall:.3f}\n"
            f"F1-score:  {metrics.f1:.3f}")
