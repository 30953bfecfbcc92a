"""Detection and counting metrics against manual annotations."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from .regions import CountReport

logger = logging.getLogger(__name__)


@dataclass
class DetectionScore:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r else 0.0


@dataclass
class EvalRecord:
    """Per-image evaluation inputs: manual vs predicted counts, detection tallies."""

    image_id: str
    manual_count: int
    predicted_count: int
    detection: DetectionScore | None = None


def detection_f1(
    report: CountReport,
    manual_points: list[tuple[int, int]],
    match_radius: float = 20.0,
) -> DetectionScore:
    """Greedy one-to-one matching of manual points to predicted cells.

    Each region offers cell_count matching slots at its centroid. Candidate
    (point, region) pairs within the radius are matched in ascending
    distance order; ties break on point then region index, so relabeling
    regions or permuting the point list cannot change the score.
    """
    slots = {i: r.cell_count for i, r in enumerate(report.regions)}
    candidates = []
    for pi, (px, py) in enumerate(sorted(manual_points)):
        for ri, region in enumerate(report.regions):
            cx, cy = region.centroid
            dist = math.hypot(px - cx, py - cy)
            if dist <= match_radius:
                candidates.append((dist, pi, ri))
    candidates.sort()
    matched_points: set[int] = set()
    tp = 0
    for dist, pi, ri in candidates:
        if pi in matched_points or slots[ri] <= 0:
            continue
        matched_points.add(pi)
        slots[ri] -= 1
        tp += 1
    total_predicted = sum(r.cell_count for r in report.regions)
    return DetectionScore(tp=tp, fp=total_predicted - tp, fn=len(manual_points) - tp)


@dataclass
class CountAccuracy:
    per_image: dict[str, float]
    mean_per_image: float
    aggregate: float
    total_manual: int
    total_predicted: int


def count_accuracy(records: list[EvalRecord]) -> CountAccuracy:
    """Count agreement three ways.

    (a) per-image accuracy 1 - |pred - manual| / manual, (b) the mean of
    those, and (c) the aggregate 1 - |sum(pred) - sum(manual)| / sum(manual).
    Images with a zero manual count are excluded from (a) and (b) with a
    warning but still enter the sums.
    """
    if not records:
        raise ValueError("count_accuracy needs at least one record")
    per_image: dict[str, float] = {}
    for rec in records:
        if rec.manual_count == 0:
            logger.warning(
                "image %s has zero manual count; excluded from per-image accuracy", rec.image_id
            )
            continue
        per_image[rec.image_id] = 1.0 - abs(rec.predicted_count - rec.manual_count) / rec.manual_count
    total_manual = sum(r.manual_count for r in records)
    total_predicted = sum(r.predicted_count for r in records)
    if total_manual > 0:
        aggregate = 1.0 - abs(total_predicted - total_manual) / total_manual
    else:
        aggregate = 1.0 if total_predicted == 0 else 0.0
    mean = sum(per_image.values()) / len(per_image) if per_image else float("nan")
    return CountAccuracy(
        per_image=per_image,
        mean_per_image=mean,
        aggregate=aggregate,
        total_manual=total_manual,
        total_predicted=total_predicted,
    )
