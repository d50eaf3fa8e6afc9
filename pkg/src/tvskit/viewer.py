"""Video access for the screening agents.

The keyframe index is built once per video: candidate frames (container
keyframes) are clustered on their embeddings, one representative per
cluster is captioned, and the result is persisted as JSON. Scanning
summarizes a time range through an LLM over the indexed captions;
localizing maps text to a time range through a three-stage search, each
stage a fresh conversation. Both may fetch extra captions through a
caption_at tool call, served by the live captioner when configured and by
the nearest indexed keyframe otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends import CaptionBackend, ChatBackend, ChatSession, ToolSpec
from .clustering import IsodataParams, select_keyframes
from .errors import (
    BudgetError,
    CaptionBackendError,
    ProtocolError,
    ValidationError,
)
from .intervals import TimeRange, VideoMeta
from .prompts import PromptLibrary
from .replies import (
    ReplyFormatError,
    parse_float_field,
    parse_tagged,
    parse_timestamp_list,
    repair_message,
)
from .transcript import Recorder

LOCALIZE_PAD_SECONDS = 5.0
STAGE1_CANDIDATES = 5

CAPTION_AT_TOOL = ToolSpec(
    name="caption_at",
    description="Fetch the caption of the frame at a timestamp (seconds).",
    parameters={
        "type": "object",
        "properties": {"timestamp": {"type": "number"}},
        "required": ["timestamp"],
    },
)


@dataclass(frozen=True)
class CandidateFrame:
    timestamp: float
    frame_index: int
    embedding_row: int
    is_iframe: bool = True


def load_manifest(path: str | Path) -> list[CandidateFrame]:
    """Read a candidate-frame manifest (JSON Lines)."""
    rows: list[CandidateFrame] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            rows.append(
                CandidateFrame(
                    timestamp=float(rec["timestamp"]),
                    frame_index=int(rec["frame_index"]),
                    embedding_row=int(rec["embedding_row"]),
                    is_iframe=bool(rec.get("is_iframe", True)),
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad manifest row: {exc}") from exc
    return rows


@dataclass(frozen=True)
class KeyframeEntry:
    timestamp: float
    frame_index: int
    caption: str
    embedding_row: int

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "frame_index": self.frame_index,
            "caption": self.caption,
            "embedding_row": self.embedding_row,
        }


@dataclass(frozen=True)
class KeyframeIndex:
    video: VideoMeta
    entries: tuple[KeyframeEntry, ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValidationError("keyframe index must contain at least one entry")
        previous = -1.0
        for e in self.entries:
            if not 0.0 <= e.timestamp <= self.video.duration:
                raise ValidationError(
                    f"keyframe timestamp {e.timestamp} outside [0, {self.video.duration}]"
                )
            if e.timestamp <= previous:
                raise ValidationError("keyframe timestamps must be strictly increasing")
            previous = e.timestamp
            if not 0 <= e.frame_index < self.video.total_frames:
                raise ValidationError(f"frame index {e.frame_index} out of range")
            if e.frame_index != round(e.timestamp * self.video.frame_rate):
                raise ValidationError(
                    f"frame index {e.frame_index} does not match "
                    f"timestamp {e.timestamp} at {self.video.frame_rate} fps"
                )

    def nearest(self, timestamp: float) -> KeyframeEntry:
        return min(self.entries, key=lambda e: (abs(e.timestamp - timestamp), e.timestamp))

    def to_dict(self) -> dict:
        return {
            "video": self.video.to_dict(),
            "entries": [e.to_dict() for e in self.entries],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"
        )

    @classmethod
    def load(cls, path: str | Path) -> "KeyframeIndex":
        d = json.loads(Path(path).read_text())
        return cls(
            video=VideoMeta.from_dict(d["video"]),
            entries=tuple(
                KeyframeEntry(
                    timestamp=float(e["timestamp"]),
                    frame_index=int(e["frame_index"]),
                    caption=e["caption"],
                    embedding_row=int(e["embedding_row"]),
                )
                for e in d["entries"]
            ),
        )


def build_index(
    manifest: Sequence[CandidateFrame],
    embeddings: np.ndarray,
    params: IsodataParams,
    captioner: CaptionBackend,
    video: VideoMeta,
) -> KeyframeIndex:
    """Cluster candidate frames and caption one representative per cluster."""
    if len(manifest) != embeddings.shape[0]:
        raise ValidationError(
            f"manifest rows ({len(manifest)}) and embedding rows "
            f"({embeddings.shape[0]}) are misaligned"
        )
    for position, row in enumerate(manifest):
        if row.embedding_row != position:
            raise ValidationError(
                f"manifest row {position} points at embedding row {row.embedding_row}"
            )
    timestamps = [row.timestamp for row in manifest]
    if any(b <= a for a, b in zip(timestamps, timestamps[1:])):
        raise ValidationError("manifest timestamps must be strictly increasing")

    picks = select_keyframes(embeddings, timestamps, params)
    entries = []
    for timestamp, row in picks:
        frame_index = manifest[row].frame_index
        try:
            caption = captioner.caption(frame_index, timestamp)
        except Exception as exc:
            if isinstance(exc, CaptionBackendError):
                raise
            raise CaptionBackendError(str(exc), frame_index=frame_index) from exc
        entries.append(
            KeyframeEntry(
                timestamp=timestamp,
                frame_index=frame_index,
                caption=caption,
                embedding_row=row,
            )
        )
    return KeyframeIndex(video=video, entries=tuple(entries))


def prep(index: KeyframeIndex, start: float, end: float) -> list[tuple[float, str]]:
    """Captions of keyframes with start <= timestamp <= end, in time order."""
    if not 0.0 <= start < end or end > index.video.duration + 1e-9:
        raise ValidationError(
            f"prep range [{start}, {end}] invalid for duration {index.video.duration}"
        )
    return [(e.timestamp, e.caption) for e in index.entries if start <= e.timestamp <= end]


def caption_lines(pairs: Sequence[tuple[float, str]]) -> str:
    if not pairs:
        return "(no keyframes in range)"
    return "\n".join(f"[t={t:.1f}s] {caption}" for t, caption in pairs)


@dataclass(frozen=True)
class LocalizeTrace:
    stage1_candidates: tuple[float, ...]
    stage2_choice: float
    stage3_raw: TimeRange
    padded: TimeRange
    extra_caption_requests: int

    def __post_init__(self) -> None:
        if self.stage2_choice not in self.stage1_candidates:
            raise ValidationError("stage-2 choice must be one of the stage-1 candidates")

    def to_dict(self) -> dict:
        return {
            "stage1_candidates": list(self.stage1_candidates),
            "stage2_choice": self.stage2_choice,
            "stage3_raw": self.stage3_raw.to_pair(),
            "padded": self.padded.to_pair(),
            "extra_caption_requests": self.extra_caption_requests,
        }


class CaptionMatchGrounder:
    """Fallback object grounder: substring match over nearest-keyframe captions.

    Every frame inherits the caption of its nearest keyframe, so matching
    frames come out as contiguous index windows. Flagged low fidelity; a
    real detector backend should replace this when available.
    """

    low_fidelity = True

    def __init__(self, index: KeyframeIndex):
        self.index = index

    def _windows(self) -> list[tuple[int, int, str]]:
        """(first_frame, last_frame, caption) per keyframe, by nearest timestamp.

        A frame exactly at the midpoint between two keyframes ties to the
        earlier one, matching KeyframeIndex.nearest().
        """
        video = self.index.video
        entries = self.index.entries
        out = []
        for i, entry in enumerate(entries):
            if i == 0:
                first = 0
            else:
                mid = (entries[i - 1].timestamp + entry.timestamp) / 2
                first = math.floor(mid * video.frame_rate) + 1
            if i == len(entries) - 1:
                last = video.total_frames - 1
            else:
                mid = (entry.timestamp + entries[i + 1].timestamp) / 2
                last = math.floor(mid * video.frame_rate)
            if last >= first:
                out.append((first, last, entry.caption))
        return out

    def select(self, obj_name: str, indices: list[int] | None) -> list[int]:
        needle = obj_name.lower()
        scope = set(indices) if indices is not None else None
        hits: list[int] = []
        for first, last, caption in self._windows():
            if needle not in caption.lower():
                continue
            for frame in range(first, last + 1):
                if scope is None or frame in scope:
                    hits.append(frame)
        return sorted(set(hits))


class Viewer:
    """Scanning and localizing over one keyframe index."""

    def __init__(
        self,
        index: KeyframeIndex,
        chat: ChatBackend,
        prompts: PromptLibrary | None = None,
        captioner: CaptionBackend | None = None,
        tool_budget: int = 8,
        recorder: Recorder | None = None,
        round_no: int = 0,
    ):
        self.index = index
        self.chat = chat
        self.prompts = prompts or PromptLibrary.defaults()
        self.captioner = captioner
        self.tool_budget = tool_budget
        self.recorder = recorder or Recorder()
        self.round_no = round_no

    def _session(self, tag: str) -> ChatSession:
        return ChatSession(
            self.chat,
            tools=[CAPTION_AT_TOOL],
            recorder=self.recorder,
            tag=tag,
            round_no=self.round_no,
        )

    def serve_caption(self, timestamp: float, tag: str = "caption_at") -> str:
        """Serve a caption request, from the live captioner when configured."""
        t = min(max(timestamp, 0.0), self.index.video.duration)
        if self.captioner is not None:
            frame_index = min(
                int(round(t * self.index.video.frame_rate)),
                self.index.video.total_frames - 1,
            )
            return self.captioner.caption(frame_index, t)
        entry = self.index.nearest(t)
        self.recorder.note(
            self.round_no,
            tag,
            f"caption_at({timestamp}) served from nearest keyframe t={entry.timestamp}",
            parsed={"served_from": "nearest_keyframe", "keyframe_timestamp": entry.timestamp},
        )
        return entry.caption

    def _tool_loop(self, session: ChatSession, prompt: str, tag: str) -> tuple[str, int]:
        """Send a prompt, serving caption_at tool calls until a text reply."""
        response = session.send(prompt)
        calls = 0
        while response.tool_call is not None:
            calls += 1
            if calls > self.tool_budget:
                raise BudgetError(
                    f"{tag}: caption tool budget ({self.tool_budget}) exceeded",
                    transcript=self.recorder.entries,
                )
            call = response.tool_call
            if call.name != CAPTION_AT_TOOL.name or "timestamp" not in call.arguments:
                raise ProtocolError(f"{tag}: malformed tool call {call.name}({call.arguments})")
            try:
                t = float(call.arguments["timestamp"])
            except (TypeError, ValueError) as exc:
                raise ProtocolError(f"{tag}: non-numeric tool timestamp") from exc
            response = session.send_tool_result(self.serve_caption(t, tag))
        return response.text or "", calls

    def _structured(
        self,
        session: ChatSession,
        prompt: str,
        tag: str,
        parse,
        expected: str,
    ) -> tuple[dict, int]:
        """Tool loop plus tagged-block parsing with one repair re-prompt."""
        text, calls = self._tool_loop(session, prompt, tag)
        try:
            parsed = parse(text)
        except ReplyFormatError as first:
            reply = session.send(repair_message(str(first), expected))
            if reply.tool_call is not None:
                raise ProtocolError(f"{tag}: tool call instead of repaired reply")
            try:
                parsed = parse(reply.text or "")
            except ReplyFormatError as second:
                raise ProtocolError(f"{tag}: {second}", raw=reply.text) from second
        self.recorder.attach_parsed(parsed)
        return parsed, calls

    def scan(self, time_range: TimeRange) -> str:
        """Summarize the content of a time range."""
        if time_range.end > self.index.video.duration + 1e-9:
            raise ValidationError(
                f"scan range {time_range.to_pair()} exceeds video duration"
            )
        captions = caption_lines(prep(self.index, time_range.start, time_range.end))
        prompt = self.prompts.render(
            "scanner",
            captions=captions,
            start=f"{time_range.start:g}",
            end=f"{time_range.end:g}",
        )
        session = self._session("scan")
        summary, _ = self._tool_loop(session, prompt, "scan")
        return summary

    def localize(self, query: str) -> tuple[TimeRange, LocalizeTrace]:
        """Three-stage text-to-range search; each stage starts a fresh conversation."""
        duration = self.index.video.duration
        extra = 0

        # stage 1: five candidate timestamps over the whole index
        all_captions = caption_lines(prep(self.index, 0.0, duration))
        prompt1 = self.prompts.render(
            "localize_stage1",
            captions=all_captions,
            query=query,
            duration=f"{duration:g}",
        )

        def parse1(text: str) -> dict:
            fields = parse_tagged(text)
            ts = parse_timestamp_list(fields)
            if len(ts) != STAGE1_CANDIDATES:
                raise ReplyFormatError(
                    f"expected {STAGE1_CANDIDATES} timestamps, got {len(ts)}"
                )
            bad = [t for t in ts if not 0.0 <= t <= duration]
            if bad:
                raise ReplyFormatError(f"timestamps outside [0, {duration}]: {bad}")
            return {"timestamps": ts}

        parsed1, calls = self._structured(
            self._session("localize.stage1"), prompt1, "localize.stage1",
            parse1, "timestamps: t1, t2, t3, t4, t5",
        )
        extra += calls
        candidates: list[float] = parsed1["timestamps"]

        # stage 2: pick one candidate
        candidate_captions = "\n".join(
            f"[t={t:.1f}s] {self.serve_caption(t, 'localize.stage2')}" for t in candidates
        )
        prompt2 = self.prompts.render(
            "localize_stage2", candidates=candidate_captions, query=query
        )

        def parse2(text: str) -> dict:
            fields = parse_tagged(text)
            choice = parse_float_field(fields, "choice")
            for t in candidates:
                if abs(choice - t) <= 1e-6:
                    return {"choice": t}
            raise ReplyFormatError(f"choice {choice} is not one of {candidates}")

        parsed2, calls = self._structured(
            self._session("localize.stage2"), prompt2, "localize.stage2",
            parse2, "choice: timestamp",
        )
        extra += calls
        choice: float = parsed2["choice"]

        # stage 3: expand the instant into a range, then pad by 5 s
        prompt3 = self.prompts.render(
            "localize_stage3",
            choice=f"{choice:g}",
            caption=self.serve_caption(choice, "localize.stage3"),
            query=query,
            duration=f"{duration:g}",
        )

        def parse3(text: str) -> dict:
            fields = parse_tagged(text)
            start = parse_float_field(fields, "start")
            end = parse_float_field(fields, "end")
            if not (0.0 <= start < end <= duration):
                raise ReplyFormatError(
                    f"range [{start}, {end}] must sit inside [0, {duration}]"
                )
            if not start <= choice <= end:
                raise ReplyFormatError(f"range [{start}, {end}] must contain {choice}")
            return {"start": start, "end": end}

        parsed3, calls = self._structured(
            self._session("localize.stage3"), prompt3, "localize.stage3",
            parse3, "start: seconds\nend: seconds",
        )
        extra += calls
        raw = TimeRange(parsed3["start"], parsed3["end"])
        padded = TimeRange(
            max(0.0, raw.start - LOCALIZE_PAD_SECONDS),
            min(duration, raw.end + LOCALIZE_PAD_SECONDS),
        )
        trace = LocalizeTrace(
            stage1_candidates=tuple(candidates),
            stage2_choice=choice,
            stage3_raw=raw,
            padded=padded,
            extra_caption_requests=extra,
        )
        self.recorder.note(
            self.round_no, "localize", f"localized {query!r} -> {padded.to_pair()}",
            parsed=trace.to_dict(),
        )
        return padded, trace
