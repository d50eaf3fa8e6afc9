"""Run transcripts: every backend exchange, recorded exactly once, in order."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass
class TranscriptEntry:
    round: int
    role: str   # system | user | assistant | tool | note
    kind: str   # session tag: launcher, validator, scan, localize.stage1, ...
    content: str
    parsed: dict[str, Any] | None = None

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "role": self.role,
            "kind": self.kind,
            "content": self.content,
            "parsed": self.parsed,
        }


@dataclass
class Recorder:
    entries: list[TranscriptEntry] = field(default_factory=list)

    def add(self, round_no: int, role: str, kind: str, content: str,
            parsed: dict | None = None) -> TranscriptEntry:
        entry = TranscriptEntry(round_no, role, kind, content, parsed)
        self.entries.append(entry)
        return entry

    def note(self, round_no: int, kind: str, content: str, parsed: dict | None = None) -> None:
        self.add(round_no, "note", kind, content, parsed)

    def attach_parsed(self, parsed: dict) -> None:
        """Attach the parsed form to the most recent assistant entry."""
        for entry in reversed(self.entries):
            if entry.role == "assistant":
                entry.parsed = parsed
                return

    def to_list(self) -> list[dict]:
        return [e.to_dict() for e in self.entries]
