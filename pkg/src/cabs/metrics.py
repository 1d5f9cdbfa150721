"""The clinical metric suite computed from match results.

Three groups over one report:

- Entity Core: precision/recall/F1 of abnormality detection, ignoring
  location and attribute correctness.
- Clinical Fidelity: location/attribute/fully-consistent accuracies,
  computed only over the hit units.
- Organ Coverage: per-organ hit rate and fully-matched rate, macro-averaged
  across the organs present in the ground truth.

Every denominator carries the shared smoothing constant EPSILON, so empty
denominators yield 0, never NaN.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import Organ, ReportDecomposition
from .errors import EmptyCorpus, LengthMismatch
from .matching import MatchResult

EPSILON = 1e-8

SCORE_FIELDS = (
    "precision",
    "recall",
    "f1",
    "location_accuracy",
    "attribute_accuracy",
    "fully_consistent_accuracy",
    "or_rate",
    "fmor_rate",
)

COUNT_FIELDS = ("hit_count", "fp_count", "gt_count")


@dataclass(frozen=True)
class MetricReport:
    precision: float
    recall: float
    f1: float
    location_accuracy: float
    attribute_accuracy: float
    fully_consistent_accuracy: float
    or_rate: float
    fmor_rate: float
    hit_count: int
    fp_count: int
    gt_count: int

    def scores(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in SCORE_FIELDS}

    def to_dict(self) -> dict:
        out: dict = self.scores()
        for name in COUNT_FIELDS:
            out[name] = getattr(self, name)
        return out


def entity_core(m: MatchResult) -> tuple[float, float, float]:
    """Detection precision, recall, and F1 with epsilon smoothing."""
    tp = m.hit_count
    fn = m.gt_count - tp
    fp = m.fp_count
    precision = tp / (tp + fp + EPSILON)
    recall = tp / (tp + fn + EPSILON)
    f1 = 2 * precision * recall / (precision + recall + EPSILON)
    return precision, recall, f1


def clinical_fidelity(m: MatchResult) -> tuple[float, float, float]:
    """Location/attribute/fully-consistent accuracies over hit units only."""
    hits = [j for j in m.judgments if j.hit]
    denom = len(hits) + EPSILON
    loc = sum(1 for j in hits if j.location_match) / denom
    attr = sum(1 for j in hits if j.attribute_match) / denom
    full = sum(1 for j in hits if j.location_match and j.attribute_match) / denom
    return loc, attr, full


def organ_coverage(m: MatchResult, gt: ReportDecomposition) -> tuple[float, float]:
    """Macro-averaged per-organ hit rate and fully-matched rate.

    Judgments must align 1:1 with ``gt.abnormalities``.
    """
    if len(m.judgments) != gt.unit_count:
        raise LengthMismatch(
            f"{len(m.judgments)} judgments for {gt.unit_count} ground-truth units"
        )
    per_organ: dict[Organ, list[int]] = {}
    for unit, judgment in zip(gt.abnormalities, m.judgments):
        counts = per_organ.setdefault(unit.organ, [0, 0, 0])
        counts[0] += 1
        if judgment.hit:
            counts[1] += 1
            if judgment.location_match and judgment.attribute_match:
                counts[2] += 1
    or_sum = 0.0
    fmor_sum = 0.0
    for total, hits, full in per_organ.values():
        or_sum += hits / (total + EPSILON)
        fmor_sum += full / (total + EPSILON)
    denom = len(per_organ) + EPSILON
    return or_sum / denom, fmor_sum / denom


def score_case(m: MatchResult, gt: ReportDecomposition) -> MetricReport:
    """All eight scores for one case."""
    precision, recall, f1 = entity_core(m)
    loc, attr, full = clinical_fidelity(m)
    or_rate, fmor_rate = organ_coverage(m, gt)
    return MetricReport(
        precision=precision,
        recall=recall,
        f1=f1,
        location_accuracy=loc,
        attribute_accuracy=attr,
        fully_consistent_accuracy=full,
        or_rate=or_rate,
        fmor_rate=fmor_rate,
        hit_count=m.hit_count,
        fp_count=m.fp_count,
        gt_count=m.gt_count,
    )


def aggregate(per_case: Sequence[MetricReport], mode: str = "macro") -> MetricReport:
    """Corpus-level report: counts summed, scores averaged over cases.

    ``mode="macro"`` (default) takes the arithmetic mean of every score.
    ``mode="micro"`` instead recomputes the detection scores from the summed
    hit/false-positive/ground-truth counts, leaving the conditional scores
    macro-averaged; this reproduces the pooled reading of detection quality.

    Raises:
        EmptyCorpus: the input list is empty.
    """
    if not per_case:
        raise EmptyCorpus("cannot aggregate an empty corpus")
    if mode not in ("macro", "micro"):
        raise ValueError(f"unknown aggregation mode {mode!r}")
    n = len(per_case)
    means = {
        name: sum(getattr(r, name) for r in per_case) / n for name in SCORE_FIELDS
    }
    hit_count = sum(r.hit_count for r in per_case)
    fp_count = sum(r.fp_count for r in per_case)
    gt_count = sum(r.gt_count for r in per_case)
    if mode == "micro":
        fn = gt_count - hit_count
        precision = hit_count / (hit_count + fp_count + EPSILON)
        recall = hit_count / (hit_count + fn + EPSILON)
        means["precision"] = precision
        means["recall"] = recall
        means["f1"] = 2 * precision * recall / (precision + recall + EPSILON)
    return MetricReport(
        hit_count=hit_count, fp_count=fp_count, gt_count=gt_count, **means
    )


def reports_to_csv(rows: Iterable[tuple[str, MetricReport]]) -> str:
    """CSV table with one row per case id."""
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(("case_id",) + SCORE_FIELDS + COUNT_FIELDS)
    for case_id, report in rows:
        d = report.to_dict()
        writer.writerow([case_id] + [d[k] for k in SCORE_FIELDS + COUNT_FIELDS])
    return buffer.getvalue()
