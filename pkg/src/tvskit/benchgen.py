"""Benchmark synthesis from step-annotated videos.

Consecutive step annotations are greedily grouped by a temporal
connectivity test, every length-3 subsequence whose consecutive pairs are
connectable becomes a triplet, and each triplet instantiates nine question
templates (three reasoning groups, three templates each). All nine
questions interrogate the middle step, so the answer is always its
sentence and the ground-truth span is always [s2, e2].
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ValidationError
from .intervals import SegmentSet, TimeRange, VideoMeta

DEFAULT_THETA = 0.1
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)
SPLIT_NAMES = ("train", "val", "test")

QUESTION_TYPES = (
    "trr1", "trr2", "trr3",
    "tir1", "tir2", "tir3",
    "mir1", "mir2", "mir3",
)

# Every template reduces to the middle step once the clip is trimmed.
DEFAULT_REWRITTEN_QUERY = "What is the cooking step shown in this video?"


@dataclass(frozen=True)
class StepAnnotation:
    video: str
    segment: TimeRange
    sentence: str

    def __post_init__(self) -> None:
        if not self.sentence.strip():
            raise ValidationError("step sentence must be non-empty")


@dataclass(frozen=True)
class Triplet:
    t1: StepAnnotation
    t2: StepAnnotation
    t3: StepAnnotation

    def __post_init__(self) -> None:
        s = (self.t1.segment, self.t2.segment, self.t3.segment)
        if not (s[0].start < s[1].start < s[2].start and s[0].end < s[1].end < s[2].end):
            raise ValidationError("triplet steps must be strictly ordered in time")


def overlap_ratio(a: TimeRange, b: TimeRange) -> float:
    """|min(e1,e2) - max(s1,s2)| / (max(e1,e2) - min(s1,s2)).

    The absolute value makes disjoint pairs yield gap/span rather than a
    negative number.
    """
    numerator = abs(min(a.end, b.end) - max(a.start, b.start))
    denominator = max(a.end, b.end) - min(a.start, b.start)
    if denominator <= 0:
        raise ValidationError(f"degenerate range pair {a.to_pair()} / {b.to_pair()}")
    return numerator / denominator


def connectable(a: TimeRange, b: TimeRange, theta: float = DEFAULT_THETA) -> bool:
    return b.start > a.start and b.end > a.end and overlap_ratio(a, b) <= theta


def is_gap_case(a: TimeRange, b: TimeRange) -> bool:
    """True when the pair is disjoint, so the overlap ratio measured a gap."""
    return min(a.end, b.end) < max(a.start, b.start)


def group_annotations(
    steps: Sequence[StepAnnotation], theta: float = DEFAULT_THETA
) -> list[list[StepAnnotation]]:
    """Greedy left-to-right grouping against each group's last member."""
    starts = [s.segment.start for s in steps]
    if starts != sorted(starts):
        raise ValidationError("annotations must be sorted by start time")
    groups: list[list[StepAnnotation]] = []
    for step in steps:
        if groups and connectable(groups[-1][-1].segment, step.segment, theta):
            groups[-1].append(step)
        else:
            groups.append([step])
    return groups


def extract_triplets(
    group: Sequence[StepAnnotation], theta: float = DEFAULT_THETA
) -> list[Triplet]:
    """All i<j<k subsequences whose consecutive pairs are connectable."""
    out: list[Triplet] = []
    n = len(group)
    for i in range(n - 2):
        for j in range(i + 1, n - 1):
            if not connectable(group[i].segment, group[j].segment, theta):
                continue
            for k in range(j + 1, n):
                if connectable(group[j].segment, group[k].segment, theta):
                    out.append(Triplet(group[i], group[j], group[k]))
    return out


@dataclass(frozen=True)
class QAItem:
    vid_name: str
    vid_fname: str
    vid_duration: float
    vid_frame_rate: float
    type: str
    question: str
    answer: str
    gt_timestamp: SegmentSet
    gt_rewritten_query: str
    item_id: str
    split: str = ""

    def to_dict(self) -> dict:
        return {
            "vid_name": self.vid_name,
            "vid_fname": self.vid_fname,
            "vid_duration": self.vid_duration,
            "vid_frame_rate": self.vid_frame_rate,
            "type": self.type,
            "question": self.question,
            "answer": self.answer,
            "gt_timestamp": self.gt_timestamp.to_pairs(),
            "gt_rewritten_query": self.gt_rewritten_query,
            "item_id": self.item_id,
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QAItem":
        return cls(
            vid_name=d["vid_name"],
            vid_fname=d["vid_fname"],
            vid_duration=float(d["vid_duration"]),
            vid_frame_rate=float(d["vid_frame_rate"]),
            type=d["type"],
            question=d["question"],
            answer=d["answer"],
            gt_timestamp=SegmentSet.from_pairs(d["gt_timestamp"]),
            gt_rewritten_query=d["gt_rewritten_query"],
            item_id=d["item_id"],
            split=d.get("split", ""),
        )

    def meta(self) -> VideoMeta:
        return VideoMeta(
            vid_name=self.vid_name,
            vid_fname=self.vid_fname,
            duration=self.vid_duration,
            frame_rate=self.vid_frame_rate,
            total_frames=max(1, round(self.vid_duration * self.vid_frame_rate)),
        )


def _fmt_t(t: float) -> str:
    return f"{t:.1f}"


def instantiate(triplet: Triplet, meta: VideoMeta, triplet_index: int) -> list[QAItem]:
    """Emit the nine question items for one triplet."""
    if meta.frame_rate <= 0:
        raise ValidationError("frame rate is required to instantiate questions")
    t1, t2, t3 = triplet.t1, triplet.t2, triplet.t3
    for step in (t1, t2, t3):
        if step.segment.end > meta.duration + 1e-9:
            raise ValidationError(
                f"step {step.segment.to_pair()} exceeds video duration {meta.duration}"
            )
    s1 = t1.segment.start
    s2, e2 = t2.segment.start, t2.segment.end
    e3 = t3.segment.end
    r = meta.frame_rate
    fs2 = round(s2 * r)
    fe2 = round(e2 * r)
    fd = round((e2 - s2) * r)

    questions = {
        "trr1": f"What is the cooking step after {t1.sentence}?",
        "trr2": f"What is the cooking step before {t3.sentence}?",
        "trr3": f"What is the cooking step between {t1.sentence} and {t3.sentence}?",
        "tir1": f"What is the step between timestamps {_fmt_t(s2)} and {_fmt_t(e2)}?",
        "tir2": f"What is the step between frame indices {fs2} and {fe2}?",
        "tir3": f"What step appears within {fd} frames after {_fmt_t(s2)} seconds?",
        "mir1": f"What is the first step after timestamp {_fmt_t(s2)}?",
        "mir2": f"What is the last step before timestamp {_fmt_t(e2)}?",
        "mir3": (
            f"Within {_fmt_t(s1)} and {_fmt_t(e3)}, what is (are) the cooking "
            f"step(s) apart from {t1.sentence} and {t3.sentence}?"
        ),
    }
    gt = SegmentSet.from_pairs([[s2, e2]])
    return [
        QAItem(
            vid_name=meta.vid_name,
            vid_fname=meta.vid_fname,
            vid_duration=meta.duration,
            vid_frame_rate=meta.frame_rate,
            type=type_tag,
            question=questions[type_tag],
            answer=t2.sentence,
            gt_timestamp=gt,
            gt_rewritten_query=DEFAULT_REWRITTEN_QUERY,
            item_id=f"{meta.vid_name}:{triplet_index}:{type_tag}",
        )
        for type_tag in QUESTION_TYPES
    ]


@dataclass
class BuildReport:
    videos: int = 0
    steps: int = 0
    groups: int = 0
    triplets: int = 0
    items: int = 0
    gap_case_links: int = 0
    gap_examples: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "videos": self.videos,
            "steps": self.steps,
            "groups": self.groups,
            "triplets": self.triplets,
            "items": self.items,
            "gap_case_links": self.gap_case_links,
            "gap_examples": self.gap_examples,
        }


def generate_items(
    videos: dict[str, dict], theta: float = DEFAULT_THETA
) -> tuple[list[QAItem], BuildReport]:
    """Run grouping, triplet extraction, and template instantiation per video.

    ``videos`` maps vid_name -> {"duration": s, "fps": r, "fname": optional,
    "annotations": [{"segment": [s, e], "sentence": text}, ...]}.
    """
    report = BuildReport()
    items: list[QAItem] = []
    for vid_name in sorted(videos):
        spec = videos[vid_name]
        if "fps" not in spec or spec["fps"] is None:
            raise ValidationError(f"{vid_name}: frame rate (fps) is required")
        duration = float(spec["duration"])
        fps = float(spec["fps"])
        meta = VideoMeta(
            vid_name=vid_name,
            vid_fname=spec.get("fname", f"{vid_name}.mp4"),
            duration=duration,
            frame_rate=fps,
            total_frames=max(1, round(duration * fps)),
        )
        steps = [
            StepAnnotation(
                video=vid_name,
                segment=TimeRange(float(a["segment"][0]), float(a["segment"][1])),
                sentence=a["sentence"],
            )
            for a in spec.get("annotations", [])
        ]
        steps.sort(key=lambda s: (s.segment.start, s.segment.end))
        report.videos += 1
        report.steps += len(steps)

        groups = group_annotations(steps, theta)
        report.groups += len(groups)
        for group in groups:
            for a, b in zip(group, group[1:]):
                if is_gap_case(a.segment, b.segment):
                    report.gap_case_links += 1
                    if len(report.gap_examples) < 10:
                        report.gap_examples.append(
                            {
                                "vid_name": vid_name,
                                "earlier": a.segment.to_pair(),
                                "later": b.segment.to_pair(),
                                "ratio": overlap_ratio(a.segment, b.segment),
                            }
                        )

        triplet_index = 0
        for group in groups:
            for triplet in extract_triplets(group, theta):
                items.extend(instantiate(triplet, meta, triplet_index))
                triplet_index += 1
        report.triplets += triplet_index
    report.items = len(items)
    return items, report


def _split_counts(c: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Exact floor allocation: train/val floors, test takes the remainder."""
    train_frac = Fraction(fractions[0]).limit_denominator(1000)
    val_frac = Fraction(fractions[1]).limit_denominator(1000)
    n_train = int(c * train_frac)
    n_val = int(c * val_frac)
    return n_train, n_val, c - n_train - n_val


def split_dataset(
    items: Sequence[QAItem], seed: int, fractions: tuple[float, float, float] = SPLIT_FRACTIONS
) -> list[QAItem]:
    """Assign splits stratified by question type.

    Per type with c items: train gets floor(c * 7/10), val floor(c * 1/10),
    test the remainder. Types too small to populate every split are
    rejected so the stratification stays honest.
    """
    by_type: dict[str, list[QAItem]] = {}
    for item in items:
        by_type.setdefault(item.type, []).append(item)

    deficient = sorted(
        t for t, members in by_type.items()
        if min(_split_counts(len(members), fractions)) < 1
    )
    if deficient:
        raise ValidationError(
            f"types too small to stratify into {SPLIT_NAMES}: {deficient}"
        )

    rng = random.Random(seed)
    out: list[QAItem] = []
    for type_tag in sorted(by_type):
        members = sorted(by_type[type_tag], key=lambda i: i.item_id)
        rng.shuffle(members)
        n_train, n_val, _ = _split_counts(len(members), fractions)
        for position, item in enumerate(members):
            if position < n_train:
                split = "train"
            elif position < n_train + n_val:
                split = "val"
            else:
                split = "test"
            out.append(replace(item, split=split))
    out.sort(key=lambda i: i.item_id)
    return out


def save_items(path: str | Path, items: Iterable[QAItem]) -> None:
    lines = [json.dumps(item.to_dict()) for item in items]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_items(path: str | Path) -> list[QAItem]:
    items = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            items.append(QAItem.from_dict(json.loads(line)))
        except (KeyError, ValueError, TypeError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad dataset record: {exc}") from exc
    return items


def load_annotations(path: str | Path) -> dict[str, dict]:
    """Read the annotation input file (JSON object keyed by vid_name)."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: annotation file must be a JSON object")
    # tolerate the wrapper layout {"database": {...}} used by step datasets
    if "database" in data and isinstance(data["database"], dict):
        data = data["database"]
    problems = []
    for vid_name, spec in data.items():
        if not isinstance(spec, dict) or "duration" not in spec or "annotations" not in spec:
            problems.append(vid_name)
    if problems:
        raise ValidationError(
            f"{path}: records missing duration/annotations: {sorted(problems)[:10]}"
        )
    return data


def gts_for_eval(items: Iterable[QAItem]) -> dict[str, tuple[str, SegmentSet]]:
    """Adapt dataset items to the evaluator's ground-truth mapping."""
    out: dict[str, tuple[str, SegmentSet]] = {}
    for item in items:
        if item.item_id in out:
            raise ValidationError(f"duplicate item_id {item.item_id!r}")
        out[item.item_id] = (item.type, item.gt_timestamp)
    return out
