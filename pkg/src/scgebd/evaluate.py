"""F1 at relative-distance evaluation with multi-rater maximization.

A prediction is correct when its distance to a ground-truth boundary,
divided by the instance duration, is <= the threshold.  Matching is
one-to-one: predictions are processed in ascending time order and each
takes the earliest still-unmatched ground truth within tolerance.  For
points on a line with a uniform tolerance this greedy attains maximum
matching cardinality, which keeps true-positive counts monotone in the
threshold.

Per video the F1 against each rater is computed and the best rater wins;
that rater's counts feed micro-aggregation across videos (macro averaging
of per-video F1 is available behind a flag).  Reports sweep thresholds
0.05 to 0.5 in steps of 0.05 and append the across-threshold average.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass, field

from .errors import InputError

DEFAULT_THRESHOLDS = tuple(round(0.05 * i, 2) for i in range(1, 11))


@dataclass
class BoundaryAnnotation:
    """Multi-rater boundary timestamps for one video."""

    video_id: str
    duration: float
    raters: list  # [(rater_id, sorted timestamps in seconds), ...]

    def validate(self) -> None:
        if self.duration <= 0:
            raise InputError(f"video '{self.video_id}': duration must be positive, got {self.duration}")
        if not self.raters:
            raise InputError(f"video '{self.video_id}': at least one rater required")
        for rater_id, stamps in self.raters:
            for ts in stamps:
                if not 0.0 <= ts <= self.duration:
                    raise InputError(
                        f"video '{self.video_id}', rater '{rater_id}': timestamp {ts} "
                        f"outside [0, {self.duration}]")
            if any(b < a for a, b in zip(stamps, stamps[1:])):
                raise InputError(
                    f"video '{self.video_id}', rater '{rater_id}': timestamps not sorted")


@dataclass
class EvalReport:
    """Precision/recall/F1 per threshold plus the across-threshold average."""

    rows: list                    # [(threshold, precision, recall, f1), ...]
    average_f1: float
    missing_videos: list = field(default_factory=list)

    @property
    def f1_at(self):
        return {t: f for t, _, _, f in self.rows}


def match(preds, gts, duration: float, threshold: float):
    """One-to-one matching of sorted prediction/ground-truth timestamps.

    Returns (TP, FP, FN).  Each prediction, in ascending order, claims the
    earliest unmatched ground truth within ``threshold * duration``.
    """
    if duration <= 0:
        raise InputError(f"instance duration must be positive, got {duration}")
    tol = threshold * duration
    tp = 0
    j = 0
    n_gts = len(gts)
    for p in preds:
        while j < n_gts and gts[j] < p - tol:
            j += 1  # permanently unreachable: later predictions are even larger
        if j < n_gts and abs(gts[j] - p) <= tol:
            tp += 1
            j += 1
    return tp, len(preds) - tp, len(gts) - tp


def f1_score(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def f1_max_over_raters(preds, annotation: BoundaryAnnotation, threshold: float) -> float:
    """Best F1 across the raters of one video."""
    _, _, best = _best_rater_counts(preds, annotation, threshold)
    return best


def _best_rater_counts(preds, annotation: BoundaryAnnotation, threshold: float):
    if not annotation.raters:
        raise InputError(f"video '{annotation.video_id}' has no raters")
    best_counts, best_f1 = None, -1.0
    for _, stamps in annotation.raters:
        counts = match(preds, stamps, annotation.duration, threshold)
        score = f1_score(*counts)
        if score > best_f1:
            best_counts, best_f1 = counts, score
    return best_counts, best_f1, best_f1


def sweep(predictions: dict, annotations: dict,
          thresholds=DEFAULT_THRESHOLDS, aggregation: str = "micro") -> EvalReport:
    """Evaluate a prediction set against annotations over all thresholds.

    ``predictions`` maps video_id -> sorted timestamp list; videos whose
    annotation is missing are reported and excluded.
    """
    if aggregation not in ("micro", "macro"):
        raise InputError(f"aggregation must be 'micro' or 'macro', got '{aggregation}'")
    missing = sorted(vid for vid in predictions if vid not in annotations)
    vids = sorted(vid for vid in predictions if vid in annotations)
    rows = []
    for threshold in thresholds:
        if aggregation == "micro":
            tp = fp = fn = 0
            for vid in vids:
                counts, _, _ = _best_rater_counts(predictions[vid], annotations[vid], threshold)
                tp, fp, fn = tp + counts[0], fp + counts[1], fn + counts[2]
            precision = tp / (tp + fp) if tp + fp else 0.0
            recall = tp / (tp + fn) if tp + fn else 0.0
            rows.append((threshold, precision, recall, f1_score(tp, fp, fn)))
        else:
            per_video = [_best_rater_counts(predictions[vid], annotations[vid], threshold)
                         for vid in vids]
            n = max(len(per_video), 1)
            precision = sum(c[0] / (c[0] + c[1]) if c[0] + c[1] else 0.0 for c, _, _ in per_video) / n
            recall = sum(c[0] / (c[0] + c[2]) if c[0] + c[2] else 0.0 for c, _, _ in per_video) / n
            f1 = sum(best for _, _, best in per_video) / n
            rows.append((threshold, precision, recall, f1))
    avg = sum(r[3] for r in rows) / len(rows) if rows else 0.0
    return EvalReport(rows=rows, average_f1=avg, missing_videos=missing)


def render_report_csv(report: EvalReport) -> str:
    """CSV text: threshold, precision, recall, f1 rows plus a final avg row."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "precision", "recall", "f1"])
    for threshold, precision, recall, f1 in report.rows:
        writer.writerow([f"{threshold:.2f}", f"{precision:.6f}", f"{recall:.6f}", f"{f1:.6f}"])
    n = max(len(report.rows), 1)
    writer.writerow([
        "avg",
        f"{sum(r[1] for r in report.rows) / n:.6f}",
        f"{sum(r[2] for r in report.rows) / n:.6f}",
        f"{report.average_f1:.6f}",
    ])
    return buf.getvalue()


def write_report_csv(report: EvalReport, path: str) -> None:
    payload = render_report_csv(report).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
