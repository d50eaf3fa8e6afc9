"""Parsing for structured agent replies.

Agents answer with tagged fields inside a fenced code block. A line that
does not look like "key: value" continues the previous field, which lets
multi-line values (tool plans, long reasons) survive the round trip.
"""

from __future__ import annotations

import json
import re

_FENCE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)
_FIELD = re.compile(r"^([a-z][a-z0-9_]*):[ \t]?(.*)$")


class ReplyFormatError(ValueError):
    """Reply text does not follow the structured format; triggers one repair."""


def extract_block(text: str) -> str:
    match = _FENCE.search(text)
    if not match:
        raise ReplyFormatError("reply contains no fenced code block")
    return match.group(1)


def parse_tagged(text: str) -> dict[str, str]:
    """Parse "key: value" fields from the reply's fenced block."""
    block = extract_block(text)
    fields: dict[str, str] = {}
    current: str | None = None
    for line in block.splitlines():
        match = _FIELD.match(line)
        if match:
            current = match.group(1)
            if current in fields:
                raise ReplyFormatError(f"duplicate field {current!r}")
            fields[current] = match.group(2).rstrip()
        elif current is not None:
            previous = fields[current]
            joined = line if not previous else previous + "\n" + line
            fields[current] = joined.rstrip()
        elif line.strip():
            raise ReplyFormatError(f"unexpected line before first field: {line!r}")
    if not fields:
        raise ReplyFormatError("fenced block contains no fields")
    return fields


def require(fields: dict[str, str], *names: str) -> None:
    missing = [n for n in names if not fields.get(n, "").strip()]
    if missing:
        raise ReplyFormatError(f"missing or empty fields: {missing}")


def parse_float_field(fields: dict[str, str], name: str) -> float:
    require(fields, name)
    try:
        return float(fields[name].strip())
    except ValueError as exc:
        raise ReplyFormatError(f"field {name!r} is not a number: {fields[name]!r}") from exc


def parse_segments_field(fields: dict[str, str], name: str = "segments") -> list[list[float]]:
    require(fields, name)
    raw = fields[name].strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ReplyFormatError(f"segments are not a JSON list: {raw!r}") from exc
    if (
        not isinstance(value, list)
        or not value
        or not all(
            isinstance(p, list) and len(p) == 2 and all(isinstance(x, (int, float)) for x in p)
            for p in value
        )
    ):
        raise ReplyFormatError(f"segments must be a non-empty list of [start, end]: {raw!r}")
    return [[float(s), float(e)] for s, e in value]


def parse_timestamp_list(fields: dict[str, str], name: str = "timestamps") -> list[float]:
    require(fields, name)
    raw = fields[name].strip().strip("[]")
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ReplyFormatError(f"field {name!r} is not a timestamp list: {raw!r}") from exc


REPAIR_PREFIX = "Your previous reply could not be parsed"


def repair_message(problem: str, expected: str) -> str:
    return (
        f"{REPAIR_PREFIX}: {problem}\n"
        f"Answer again with only a fenced code block of the form:\n{expected}"
    )
