"""Minimal ISO-BMFF reader: just enough to find the video track's sync samples.

Walks the box tree to the sample tables of the first video track and pulls
sample count, per-sample timestamps (stts deltas over the mdhd timescale),
and sync-sample numbers (stss). Per the container spec, a missing stss box
means every sample is a sync sample.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path


class Mp4ParseError(ValueError):
    pass


CONTAINERS = {b"moov", b"trak", b"mdia", b"minf", b"stbl"}


def _boxes(buf: bytes, start: int, end: int):
    offset = start
    while offset + 8 <= end:
        size, kind = struct.unpack(">I4s", buf[offset : offset + 8])
        header = 8
        if size == 1:
            if offset + 16 > end:
                raise Mp4ParseError("truncated 64-bit box header")
            size = struct.unpack(">Q", buf[offset + 8 : offset + 16])[0]
            header = 16
        elif size == 0:
            size = end - offset
        if size < header or offset + size > end:
            raise Mp4ParseError(f"bad box size for {kind!r}")
        yield kind, offset + header, offset + size
        offset += size


def _find(buf: bytes, start: int, end: int, path: tuple[bytes, ...]):
    """Yield body spans of every box matching the path below (start, end)."""
    kind_wanted, *rest = path
    for kind, body_start, body_end in _boxes(buf, start, end):
        if kind != kind_wanted:
            continue
        if not rest:
            yield body_start, body_end
        elif kind in CONTAINERS:
            yield from _find(buf, body_start, body_end, tuple(rest))


@dataclass(frozen=True)
class VideoTrack:
    timescale: int
    duration_units: int
    sample_count: int
    timestamps: tuple[float, ...]      # presentation time of each sample, seconds
    sync_samples: tuple[int, ...]      # 0-based sample indices that are keyframes

    @property
    def duration(self) -> float:
        return self.duration_units / self.timescale


def _full_box(buf: bytes, start: int) -> int:
    """Skip the version/flags word of a full box; returns payload offset."""
    return start + 4


def _parse_mdhd(buf: bytes, start: int, end: int) -> tuple[int, int]:
    version = buf[start]
    if version == 1:
        timescale, duration = struct.unpack(">IQ", buf[start + 20 : start + 32])
    else:
        timescale, duration = struct.unpack(">II", buf[start + 12 : start + 20])
    if timescale == 0:
        raise Mp4ParseError("mdhd timescale is zero")
    return timescale, duration


def _parse_stts(buf: bytes, start: int) -> list[tuple[int, int]]:
    body = _full_box(buf, start)
    (count,) = struct.unpack(">I", buf[body : body + 4])
    out = []
    pos = body + 4
    for _ in range(count):
        n, delta = struct.unpack(">II", buf[pos : pos + 8])
        out.append((n, delta))
        pos += 8
    return out


def _parse_stss(buf: bytes, start: int) -> list[int]:
    body = _full_box(buf, start)
    (count,) = struct.unpack(">I", buf[body : body + 4])
    return list(struct.unpack(f">{count}I", buf[body + 4 : body + 4 + 4 * count]))


def _parse_stsz_count(buf: bytes, start: int) -> int:
    body = _full_box(buf, start)
    _, count = struct.unpack(">II", buf[body : body + 8])
    return count


def read_video_track(path: str | Path) -> VideoTrack:
    """Parse the first video track's timing and sync-sample tables."""
    buf = Path(path).read_bytes()
    if len(buf) < 12:
        raise Mp4ParseError(f"{path}: too small to be an MP4 file")

    for trak_start, trak_end in _find(buf, 0, len(buf), (b"moov", b"trak")):
        handlers = list(_find(buf, trak_start, trak_end, (b"mdia", b"hdlr")))
        if not handlers:
            continue
        h_start, _ = handlers[0]
        handler = buf[h_start + 8 : h_start + 12]
        if handler != b"vide":
            continue

        mdhd = list(_find(buf, trak_start, trak_end, (b"mdia", b"mdhd")))
        stts = list(_find(buf, trak_start, trak_end, (b"mdia", b"minf", b"stbl", b"stts")))
        stsz = list(_find(buf, trak_start, trak_end, (b"mdia", b"minf", b"stbl", b"stsz")))
        stss = list(_find(buf, trak_start, trak_end, (b"mdia", b"minf", b"stbl", b"stss")))
        if not (mdhd and stts and stsz):
            raise Mp4ParseError(f"{path}: video track is missing sample tables")

        timescale, duration_units = _parse_mdhd(buf, *mdhd[0])
        deltas = _parse_stts(buf, stts[0][0])
        sample_count = _parse_stsz_count(buf, stsz[0][0])

        timestamps = []
        clock = 0
        for n, delta in deltas:
            for _ in range(n):
                timestamps.append(clock / timescale)
                clock += delta
        if len(timestamps) != sample_count:
            raise Mp4ParseError(
                f"{path}: stts covers {len(timestamps)} samples, stsz says {sample_count}"
            )

        if stss:
            sync = tuple(s - 1 for s in _parse_stss(buf, stss[0][0]))
        else:
            # no stss box: every sample is a sync sample
            sync = tuple(range(sample_count))
        bad = [s for s in sync if not 0 <= s < sample_count]
        if bad:
            raise Mp4ParseError(f"{path}: sync samples out of range: {bad[:5]}")

        return VideoTrack(
            timescale=timescale,
            duration_units=duration_units,
            sample_count=sample_count,
            timestamps=tuple(timestamps),
            sync_samples=sync,
        )
    raise Mp4ParseError(f"{path}: no video track found")
