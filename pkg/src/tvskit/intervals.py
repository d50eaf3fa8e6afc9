"""Interval algebra over a single video timeline.

Segment sets are kept in normalized form: sorted by start, pairwise
disjoint, with touching ranges fused. All endpoints are seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .errors import ValidationError

# Endpoint comparison tolerance in seconds; adjacency within EPS counts
# as touching.
EPS = 1e-9


@dataclass(frozen=True, order=True)
class TimeRange:
    """A half-open-in-spirit [start, end] span with start < end."""

    start: float
    end: float

    def __post_init__(self) -> None:
        for name, value in (("start", self.start), ("end", self.end)):
            if not math.isfinite(value):
                raise ValidationError(f"TimeRange.{name} must be finite, got {value!r}")
            if value < 0:
                raise ValidationError(f"TimeRange.{name} must be non-negative, got {value!r}")
        if not self.start < self.end:
            raise ValidationError(
                f"TimeRange requires start < end, got [{self.start}, {self.end}]"
            )

    @property
    def duration(self) -> float:
        return self.end - self.start

    def to_pair(self) -> list[float]:
        return [float(self.start), float(self.end)]


@dataclass(frozen=True)
class SegmentSet:
    """Ordered, disjoint, non-adjacent time ranges. Construct via normalize()."""

    segments: tuple[TimeRange, ...] = ()

    def __iter__(self) -> Iterator[TimeRange]:
        return iter(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def __bool__(self) -> bool:
        return bool(self.segments)

    @property
    def duration(self) -> float:
        return total_duration(self)

    def to_pairs(self) -> list[list[float]]:
        return [r.to_pair() for r in self.segments]

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]]) -> "SegmentSet":
        return normalize([TimeRange(float(s), float(e)) for s, e in pairs])

    def clamped(self, lo: float, hi: float) -> "SegmentSet":
        """Intersection with [lo, hi]; degenerate slivers are dropped."""
        if hi <= lo:
            raise ValidationError(f"clamp window [{lo}, {hi}] is empty")
        kept = []
        for r in self.segments:
            s, e = max(r.start, lo), min(r.end, hi)
            if e - s > EPS:
                kept.append(TimeRange(s, e))
        return normalize(kept)


def normalize(ranges: Iterable[TimeRange]) -> SegmentSet:
    """Sort and fuse overlapping or touching ranges into a SegmentSet.

    Empty input yields the empty set. Total duration is preserved for
    already-disjoint input.
    """
    items = sorted(ranges, key=lambda r: (r.start, r.end))
    merged: list[TimeRange] = []
    for r in items:
        if merged and r.start <= merged[-1].end + EPS:
            last = merged[-1]
            if r.end > last.end:
                merged[-1] = TimeRange(last.start, r.end)
        else:
            merged.append(r)
    return SegmentSet(tuple(merged))


def total_duration(s: SegmentSet) -> float:
    return sum(r.duration for r in s.segments)


def intersect(a: SegmentSet, b: SegmentSet) -> SegmentSet:
    """Normalized intersection of two normalized sets (two-pointer sweep)."""
    out: list[TimeRange] = []
    i = j = 0
    sa, sb = a.segments, b.segments
    while i < len(sa) and j < len(sb):
        lo = max(sa[i].start, sb[j].start)
        hi = min(sa[i].end, sb[j].end)
        if hi - lo > EPS:
            out.append(TimeRange(lo, hi))
        if sa[i].end < sb[j].end:
            i += 1
        else:
            j += 1
    return normalize(out)


def union(a: SegmentSet, b: SegmentSet) -> SegmentSet:
    return normalize(list(a.segments) + list(b.segments))


def sets_equal(a: SegmentSet, b: SegmentSet, tol: float = EPS) -> bool:
    """Structural equality with endpoint tolerance."""
    if len(a) != len(b):
        return False
    return all(
        abs(x.start - y.start) <= tol and abs(x.end - y.end) <= tol
        for x, y in zip(a.segments, b.segments)
    )


@dataclass(frozen=True)
class VideoMeta:
    """Container-level metadata for one video."""

    vid_name: str
    vid_fname: str
    duration: float
    frame_rate: float
    total_frames: int
    resolution: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if not self.vid_name:
            raise ValidationError("vid_name must be non-empty")
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ValidationError(f"duration must be positive, got {self.duration!r}")
        if not (math.isfinite(self.frame_rate) and self.frame_rate > 0):
            raise ValidationError(f"frame_rate must be positive, got {self.frame_rate!r}")
        if self.total_frames < 1:
            raise ValidationError(f"total_frames must be >= 1, got {self.total_frames}")
        # one second of slack for container rounding
        if abs(self.total_frames - round(self.duration * self.frame_rate)) > self.frame_rate:
            raise ValidationError(
                f"total_frames {self.total_frames} inconsistent with "
                f"duration {self.duration} s at {self.frame_rate} fps"
            )
        if self.resolution is not None:
            w, h = self.resolution
            if w <= 0 or h <= 0:
                raise ValidationError(f"resolution must be positive, got {self.resolution}")

    @property
    def extent(self) -> TimeRange:
        return TimeRange(0.0, self.duration)

    def full_video(self) -> SegmentSet:
        return SegmentSet((self.extent,))

    def to_dict(self) -> dict:
        d = {
            "vid_name": self.vid_name,
            "vid_fname": self.vid_fname,
            "duration": self.duration,
            "frame_rate": self.frame_rate,
            "total_frames": self.total_frames,
        }
        if self.resolution is not None:
            d["resolution"] = list(self.resolution)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VideoMeta":
        res = d.get("resolution")
        return cls(
            vid_name=d["vid_name"],
            vid_fname=d["vid_fname"],
            duration=float(d["duration"]),
            frame_rate=float(d["frame_rate"]),
            total_frames=int(d["total_frames"]),
            resolution=tuple(res) if res is not None else None,
        )


@dataclass(frozen=True)
class ScreeningPair:
    """The (trimmed segments, rewritten query) output of one screening run."""

    video: SegmentSet
    query: str

    def __post_init__(self) -> None:
        if not self.video:
            raise ValidationError("ScreeningPair.video must be non-empty")
        if not self.query.strip():
            raise ValidationError("ScreeningPair.query must be non-empty")
