"""Duration-based overlap metrics between predicted and ground-truth segment sets.

IoU, precision, and coverage are computed over total segment duration in
seconds, so scores are independent of frame rate. "Average" rows are the
item-level mean over all scored items; a macro (mean-of-category-means)
average is reported alongside for comparison.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ValidationError
from .intervals import SegmentSet, intersect, total_duration, union

# Question-type tag prefix -> category shown as a report column.
CATEGORIES = {
    "trr": "Temporal Relational",
    "tir": "Timepoint Indexed",
    "mir": "Multifaceted Integrative",
}
CATEGORY_ORDER = tuple(CATEGORIES.values())


@dataclass(frozen=True)
class PairScores:
    iou: float
    precision: float
    coverage: float
    f1: float

    def as_dict(self) -> dict[str, float]:
        return {
            "miou": self.iou,
            "precision": self.precision,
            "coverage": self.coverage,
            "f1": self.f1,
        }


def score_pair(pred: SegmentSet, gt: SegmentSet) -> PairScores:
    """Score one prediction against ground truth.

    Empty predictions are legal and score zero everywhere; empty ground
    truth is a data error.
    """
    if not gt:
        raise ValidationError("ground-truth segment set must be non-empty")
    gt_dur = total_duration(gt)
    pred_dur = total_duration(pred)
    inter = total_duration(intersect(pred, gt))
    uni = total_duration(union(pred, gt))
    iou = inter / uni if uni > 0 else 0.0
    precision = inter / pred_dur if pred_dur > 0 else 0.0
    coverage = inter / gt_dur
    f1 = 2 * precision * coverage / (precision + coverage) if precision + coverage > 0 else 0.0
    return PairScores(iou=iou, precision=precision, coverage=coverage, f1=f1)


@dataclass(frozen=True)
class MetricCell:
    """Mean of the four metrics over n items."""

    miou: float
    precision: float
    coverage: float
    f1: float
    n: int

    def as_dict(self) -> dict:
        return {
            "miou": self.miou,
            "precision": self.precision,
            "coverage": self.coverage,
            "f1": self.f1,
            "n": self.n,
        }


def _mean_cell(scores: Sequence[PairScores]) -> MetricCell:
    n = len(scores)
    if n == 0:
        return MetricCell(0.0, 0.0, 0.0, 0.0, 0)
    return MetricCell(
        miou=sum(s.iou for s in scores) / n,
        precision=sum(s.precision for s in scores) / n,
        coverage=sum(s.coverage for s in scores) / n,
        f1=sum(s.f1 for s in scores) / n,
        n=n,
    )


@dataclass(frozen=True)
class MetricsReport:
    per_type: dict[str, MetricCell] = field(default_factory=dict)
    per_category: dict[str, MetricCell] = field(default_factory=dict)
    average: MetricCell = MetricCell(0.0, 0.0, 0.0, 0.0, 0)
    macro_average: MetricCell = MetricCell(0.0, 0.0, 0.0, 0.0, 0)

    def to_dict(self) -> dict:
        return {
            "per_type": {k: v.as_dict() for k, v in sorted(self.per_type.items())},
            "per_category": {k: self.per_category[k].as_dict()
                             for k in CATEGORY_ORDER if k in self.per_category},
            "average": self.average.as_dict(),
            "macro_average": self.macro_average.as_dict(),
        }


def category_of(type_tag: str) -> str:
    prefix = type_tag[:3]
    if prefix not in CATEGORIES:
        raise ValidationError(f"unknown question-type tag {type_tag!r}")
    return CATEGORIES[prefix]


def evaluate(
    preds: Iterable[tuple[str, SegmentSet]],
    gts: Mapping[str, tuple[str, SegmentSet]],
) -> MetricsReport:
    """Score predictions against a benchmark.

    ``gts`` maps item_id -> (question-type tag, ground-truth SegmentSet).
    Every predicted item_id must exist in the benchmark and appear once.
    """
    pred_list = list(preds)
    seen: set[str] = set()
    dupes = []
    for item_id, _ in pred_list:
        if item_id in seen:
            dupes.append(item_id)
        seen.add(item_id)
    if dupes:
        raise ValidationError(f"duplicate prediction ids: {sorted(set(dupes))}")
    missing = sorted(i for i, _ in pred_list if i not in gts)
    if missing:
        raise ValidationError(f"predictions for unknown item ids: {missing}")

    by_type: dict[str, list[PairScores]] = {}
    by_cat: dict[str, list[PairScores]] = {}
    all_scores: list[PairScores] = []
    # deterministic regardless of input order
    for item_id, pred in sorted(pred_list, key=lambda p: p[0]):
        type_tag, gt = gts[item_id]
        s = score_pair(pred, gt)
        by_type.setdefault(type_tag, []).append(s)
        by_cat.setdefault(category_of(type_tag), []).append(s)
        all_scores.append(s)

    per_category = {c: _mean_cell(v) for c, v in by_cat.items()}
    cats = [per_category[c] for c in CATEGORY_ORDER if c in per_category]
    macro = MetricCell(
        miou=sum(c.miou for c in cats) / len(cats) if cats else 0.0,
        precision=sum(c.precision for c in cats) / len(cats) if cats else 0.0,
        coverage=sum(c.coverage for c in cats) / len(cats) if cats else 0.0,
        f1=sum(c.f1 for c in cats) / len(cats) if cats else 0.0,
        n=len(all_scores),
    )
    return MetricsReport(
        per_type={t: _mean_cell(v) for t, v in by_type.items()},
        per_category=per_category,
        average=_mean_cell(all_scores),
        macro_average=macro,
    )


def load_predictions(path: str | Path) -> list[tuple[str, SegmentSet]]:
    """Read a JSON Lines prediction file: {"item_id": ..., "segments": [[s,e],...]}."""
    out: list[tuple[str, SegmentSet]] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out.append((rec["item_id"], SegmentSet.from_pairs(rec["segments"])))
        except (KeyError, ValueError, TypeError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad prediction record: {exc}") from exc
    return out


def save_predictions(path: str | Path, preds: Iterable[tuple[str, SegmentSet]]) -> None:
    lines = [
        json.dumps({"item_id": item_id, "segments": seg.to_pairs()}, sort_keys=True)
        for item_id, seg in preds
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def format_table(report: MetricsReport) -> str:
    """Render the report as a fixed-width text table, one category per column group."""
    cols = [c for c in CATEGORY_ORDER if c in report.per_category] + ["Average"]
    cells = [report.per_category[c] for c in CATEGORY_ORDER if c in report.per_category]
    cells.append(report.average)
    header = f"{'':<12}" + "".join(f"{c:>28}" for c in cols)
    sub = f"{'':<12}" + "".join(f"{'mIoU':>7}{'Pre.':>7}{'Cov.':>7}{'F1':>7}" for _ in cols)
    row = f"{'scores':<12}" + "".join(
        f"{c.miou:>7.3f}{c.precision:>7.3f}{c.coverage:>7.3f}{c.f1:>7.3f}" for c in cells
    )
    counts = f"{'n':<12}" + "".join(f"{c.n:>28d}" for c in cells)
    return "\n".join([header, sub, row, counts])
