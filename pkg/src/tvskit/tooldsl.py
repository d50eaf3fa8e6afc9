"""The blind screening variant: a tiny plan language over frame indices.

A plan is a fixed sequence of tool invocations, one per line in the form
``name = tool(arg, ...)``. Arguments are numbers, double-quoted strings,
None, bracketed integer lists, or names bound by earlier steps; ``#``
starts a comment. There are no loops or conditionals. The executor
evaluates steps in order and converts the final frame-index list into
segment time ranges by mapping each maximal run of consecutive indices
[i..j] to [i/r, (j+1)/r] at frame rate r.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable

from .backends import BackendBundle, ChatSession, GrounderBackend
from .errors import (
    BackendError,
    BudgetError,
    FeatureUnavailableError,
    PlanError,
    ProtocolError,
)
from .intervals import ScreeningPair, SegmentSet, TimeRange, VideoMeta, normalize
from .prompts import PromptLibrary
from .replies import ReplyFormatError, parse_tagged, repair_message, require
from .transcript import Recorder


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class PlanStep:
    binds: str
    tool: str
    args: tuple
    line: int


@dataclass(frozen=True)
class ToolPlan:
    steps: tuple[PlanStep, ...]


@dataclass
class ExecutionContext:
    meta: VideoMeta
    grounder: GrounderBackend | None = None
    warnings: list[str] = field(default_factory=list)


def _check_index_list(value, tool: str) -> list[int]:
    if not isinstance(value, list) or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in value
    ):
        raise PlanError(f"{tool} expects an integer index list, got {value!r}")
    return value


def _sorted_unique(values: list[int]) -> list[int]:
    return sorted(set(values))


def _tool_get_duration(ctx: ExecutionContext) -> float:
    return float(ctx.meta.duration)


def _tool_get_resolution(ctx: ExecutionContext) -> tuple[int, int]:
    if ctx.meta.resolution is None:
        raise PlanError("video metadata has no resolution")
    return tuple(ctx.meta.resolution)


def _tool_get_total_frame_num(ctx: ExecutionContext) -> int:
    return int(ctx.meta.total_frames)


def _tool_grounding_select(ctx: ExecutionContext, obj_name, concerned) -> list[int]:
    if not isinstance(obj_name, str) or not obj_name:
        raise PlanError(f"grounding_select needs an object name, got {obj_name!r}")
    if concerned is not None:
        concerned = _sorted_unique(_check_index_list(concerned, "grounding_select"))
    if ctx.grounder is None:
        raise FeatureUnavailableError(
            "grounding_select requires a configured grounder backend"
        )
    hits = ctx.grounder.select(obj_name, concerned)
    if getattr(ctx.grounder, "low_fidelity", False):
        ctx.warnings.append(
            f"grounding_select({obj_name!r}) served by the caption matcher (low fidelity)"
        )
    return _sorted_unique([int(i) for i in hits])


def _tool_indices_list_intersect(ctx: ExecutionContext, a, b) -> list[int]:
    a = _check_index_list(a, "indices_list_intersect")
    b = _check_index_list(b, "indices_list_intersect")
    return sorted(set(a) & set(b))


def _tool_indices_list_union(ctx: ExecutionContext, a, b) -> list[int]:
    a = _check_index_list(a, "indices_list_union")
    b = _check_index_list(b, "indices_list_union")
    return sorted(set(a) | set(b))


def _tool_indices_concat_and_fill(ctx: ExecutionContext, a, b) -> list[int]:
    a = _check_index_list(a, "indices_concat_and_fill")
    b = _check_index_list(b, "indices_concat_and_fill")
    merged = sorted(set(a) | set(b))
    if not merged:
        return []
    return list(range(merged[0], merged[-1] + 1))


def _tool_indices_concat(ctx: ExecutionContext, a, b) -> list[int]:
    a = _check_index_list(a, "indices_concat")
    b = _check_index_list(b, "indices_concat")
    return list(a) + list(b)


def _clamp_index(ctx: ExecutionContext, i: int) -> int:
    return min(max(i, 0), ctx.meta.total_frames - 1)


def _tool_timestamp_to_single_index(ctx: ExecutionContext, t) -> int:
    if not isinstance(t, (int, float)) or isinstance(t, bool):
        raise PlanError(f"timestamp_to_single_index needs a number, got {t!r}")
    return _clamp_index(ctx, math.floor(float(t) * ctx.meta.frame_rate))


def _tool_single_timestamp_to_index_range(ctx: ExecutionContext, t) -> list[int]:
    center = _tool_timestamp_to_single_index(ctx, t)
    lo = max(center - 30, 0)
    hi = min(center + 29, ctx.meta.total_frames - 1)
    return list(range(lo, hi + 1))


def _tool_range_timestamp_to_index_range(ctx: ExecutionContext, start, end) -> list[int]:
    for name, value in (("start", start), ("end", end)):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise PlanError(f"range_timestamp_to_index_range {name} must be a number")
    lo = math.floor(float(start) * ctx.meta.frame_rate)
    hi = math.floor(float(end) * ctx.meta.frame_rate)
    lo = max(lo, 0)
    hi = min(hi, ctx.meta.total_frames - 1)
    if hi < lo:
        return []
    return list(range(lo, hi + 1))


@dataclass(frozen=True)
class RegisteredTool:
    fn: Callable
    arity: int
    doc: str


REGISTRY: dict[str, RegisteredTool] = {
    "get_duration": RegisteredTool(
        _tool_get_duration, 0,
        "get_duration(): return the video duration in seconds, as a float.",
    ),
    "get_resolution": RegisteredTool(
        _tool_get_resolution, 0,
        "get_resolution(): return the video resolution as a (width, height) tuple.",
    ),
    "get_total_frame_num": RegisteredTool(
        _tool_get_total_frame_num, 0,
        "get_total_frame_num(): return the total number of frames, as an integer.",
    ),
    "grounding_select": RegisteredTool(
        _tool_grounding_select, 2,
        "grounding_select(obj_name, concerned_indices): return the indices of all "
        "frames showing the named object, restricted to concerned_indices; pass "
        "None to search every frame.",
    ),
    "indices_list_intersect": RegisteredTool(
        _tool_indices_list_intersect, 2,
        "indices_list_intersect(list1, list2): return the intersection of two "
        "index lists.",
    ),
    "indices_list_union": RegisteredTool(
        _tool_indices_list_union, 2,
        "indices_list_union(list1, list2): return the union of two index lists.",
    ),
    "indices_concat_and_fill": RegisteredTool(
        _tool_indices_concat_and_fill, 2,
        "indices_concat_and_fill(list1, list2): sorted union of the two lists with "
        "every missing value filled in so the sequence is continuous.",
    ),
    "indices_concat": RegisteredTool(
        _tool_indices_concat, 2,
        "indices_concat(list1, list2): plain concatenation of the two lists, "
        "order preserved.",
    ),
    "timestamp_to_single_index": RegisteredTool(
        _tool_timestamp_to_single_index, 1,
        "timestamp_to_single_index(timestamp): the frame index at the given time "
        "in seconds.",
    ),
    "single_timestamp_to_index_range": RegisteredTool(
        _tool_single_timestamp_to_index_range, 1,
        "single_timestamp_to_index_range(timestamp): indices of 60 consecutive "
        "frames centered at the timestamp.",
    ),
    "range_timestamp_to_index_range": RegisteredTool(
        _tool_range_timestamp_to_index_range, 2,
        "range_timestamp_to_index_range(start, end): all frame indices between "
        "the start and end timestamps, inclusive.",
    ),
}


def render_tool_docs() -> str:
    return "\n".join(
        f"{i}. {tool.doc}" for i, tool in enumerate(REGISTRY.values(), start=1)
    )


_STEP = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*([A-Za-z_][A-Za-z0-9_]*)\s*\((.*)\)\s*$")


def _split_args(raw: str, line_no: int) -> list[str]:
    """Split a comma-separated argument string, honoring quotes and brackets."""
    parts: list[str] = []
    depth = 0
    in_string = False
    current = []
    i = 0
    while i < len(raw):
        ch = raw[i]
        if in_string:
            current.append(ch)
            if ch == "\\" and i + 1 < len(raw):
                current.append(raw[i + 1])
                i += 1
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
            current.append(ch)
        elif ch == "[":
            depth += 1
            current.append(ch)
        elif ch == "]":
            depth -= 1
            if depth < 0:
                raise PlanError("unbalanced brackets", line=line_no)
            current.append(ch)
        elif ch == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
        i += 1
    if in_string:
        raise PlanError("unterminated string", line=line_no)
    if depth != 0:
        raise PlanError("unbalanced brackets", line=line_no)
    if current or parts:
        parts.append("".join(current))
    return [p.strip() for p in parts]


_INT = re.compile(r"^[+-]?\d+$")
_FLOAT = re.compile(r"^[+-]?(\d+\.\d*|\.\d+|\d+[eE][+-]?\d+|\d+\.\d*[eE][+-]?\d+)$")
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _parse_arg(token: str, bound: set[str], line_no: int):
    if token == "None":
        return None
    if _INT.match(token):
        return int(token)
    if _FLOAT.match(token):
        return float(token)
    if token.startswith('"') and token.endswith('"') and len(token) >= 2:
        try:
            return json.loads(token)
        except json.JSONDecodeError as exc:
            raise PlanError(f"bad string literal {token}", line=line_no) from exc
    if token.startswith("[") and token.endswith("]"):
        body = token[1:-1].strip()
        if not body:
            return []
        values = []
        for piece in body.split(","):
            piece = piece.strip()
            if not _INT.match(piece):
                raise PlanError(f"index lists hold integers only, got {piece!r}", line=line_no)
            values.append(int(piece))
        return values
    if _IDENT.match(token):
        if token not in bound:
            raise PlanError(f"reference to unbound name {token!r}", line=line_no)
        return Ref(token)
    raise PlanError(f"cannot parse argument {token!r}", line=line_no)


def _strip_comment(line: str) -> str:
    out = []
    in_string = False
    i = 0
    while i < len(line):
        ch = line[i]
        if in_string:
            out.append(ch)
            if ch == "\\" and i + 1 < len(line):
                out.append(line[i + 1])
                i += 1
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
            out.append(ch)
        elif ch == "#":
            break
        else:
            out.append(ch)
        i += 1
    return "".join(out)


def parse_plan(text: str) -> ToolPlan:
    """Parse plan text; unknown tools, bad arity, and unbound names are rejected."""
    steps: list[PlanStep] = []
    bound: set[str] = set()
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw_line).strip()
        if not line:
            continue
        match = _STEP.match(line)
        if not match:
            raise PlanError(f"expected 'name = tool(args)', got {raw_line.strip()!r}",
                            line=line_no)
        binds, tool, arg_text = match.groups()
        if tool not in REGISTRY:
            raise PlanError(f"unknown tool {tool!r}", line=line_no)
        if binds in bound:
            raise PlanError(f"name {binds!r} is already bound", line=line_no)
        tokens = _split_args(arg_text, line_no)
        expected = REGISTRY[tool].arity
        if len(tokens) != expected:
            raise PlanError(
                f"{tool} takes {expected} argument(s), got {len(tokens)}", line=line_no
            )
        args = tuple(_parse_arg(t, bound, line_no) for t in tokens)
        steps.append(PlanStep(binds=binds, tool=tool, args=args, line=line_no))
        bound.add(binds)
    if not steps:
        raise PlanError("plan is empty")
    return ToolPlan(steps=tuple(steps))


def _format_arg(arg) -> str:
    if arg is None:
        return "None"
    if isinstance(arg, Ref):
        return arg.name
    if isinstance(arg, bool):
        raise PlanError(f"booleans are not plan literals: {arg!r}")
    if isinstance(arg, (int, float)):
        return repr(arg)
    if isinstance(arg, str):
        return json.dumps(arg)
    if isinstance(arg, list):
        return "[" + ",".join(str(int(v)) for v in arg) + "]"
    raise PlanError(f"cannot format argument {arg!r}")


def format_plan(plan: ToolPlan) -> str:
    """Canonical text form; parse(format(parse(x))) == parse(x)."""
    return "\n".join(
        f"{s.binds} = {s.tool}({', '.join(_format_arg(a) for a in s.args)})"
        for s in plan.steps
    )


def indices_to_segments(indices: list[int], frame_rate: float) -> SegmentSet:
    """Map maximal runs of consecutive indices [i..j] to time [i/r, (j+1)/r]."""
    if not indices:
        return SegmentSet()
    ranges: list[TimeRange] = []
    run_start = prev = indices[0]
    for i in indices[1:]:
        if i == prev + 1:
            prev = i
            continue
        ranges.append(TimeRange(run_start / frame_rate, (prev + 1) / frame_rate))
        run_start = prev = i
    ranges.append(TimeRange(run_start / frame_rate, (prev + 1) / frame_rate))
    return normalize(ranges)


@dataclass
class ExecutionResult:
    value: object
    segments: SegmentSet
    bindings: dict[str, object]
    warnings: list[str]


def execute_plan(
    plan: ToolPlan,
    meta: VideoMeta,
    grounder: GrounderBackend | None = None,
) -> ExecutionResult:
    """Evaluate steps in order; the final value must be a frame-index list."""
    ctx = ExecutionContext(meta=meta, grounder=grounder)
    bindings: dict[str, object] = {}
    value: object = None
    for step in plan.steps:
        args = [bindings[a.name] if isinstance(a, Ref) else a for a in step.args]
        try:
            value = REGISTRY[step.tool].fn(ctx, *args)
        except PlanError as exc:
            raise PlanError(str(exc), line=step.line) from exc
        bindings[step.binds] = value

    if not isinstance(value, list):
        raise PlanError(f"final value must be a frame-index list, got {type(value).__name__}")
    final = _check_index_list(value, "final value")
    if final != _sorted_unique(final):
        ctx.warnings.append("final index list was unsorted or had duplicates; normalized")
        final = _sorted_unique(final)
    out_of_range = [i for i in final if not 0 <= i < meta.total_frames]
    if out_of_range:
        raise PlanError(f"final indices out of range: {out_of_range[:5]}")
    if not final:
        ctx.warnings.append("final index list is empty; producing an empty segment set")
    segments = indices_to_segments(final, meta.frame_rate)
    return ExecutionResult(
        value=final, segments=segments, bindings=bindings, warnings=ctx.warnings
    )


@dataclass(frozen=True)
class BlindReply:
    rewritten_query: str
    plan: ToolPlan
    plan_text: str


def _parse_blind_reply(text: str) -> BlindReply:
    fields = parse_tagged(text)
    require(fields, "query", "plan")
    plan_text = fields["plan"]
    try:
        plan = parse_plan(plan_text)
    except PlanError as exc:
        raise ReplyFormatError(f"bad plan: {exc}") from exc
    return BlindReply(
        rewritten_query=fields["query"].strip(), plan=plan, plan_text=plan_text
    )


def run_tvs_blind(
    meta: VideoMeta,
    query: str,
    backends: BackendBundle,
    config=None,
    prompts: PromptLibrary | None = None,
):
    """Single-turn variant: one reply carries the rewritten query and the plan."""
    from .agents import ScreeningConfig, ScreeningResult

    config = config or ScreeningConfig()
    prompts = prompts or PromptLibrary.defaults()
    recorder = Recorder()
    session = ChatSession(
        backends.chat, budget=config.session_budget, recorder=recorder,
        tag="blind", round_no=1,
    )
    prompt = prompts.render("blind", query=query, tools=render_tool_docs())

    try:
        response = session.send(prompt)
        if response.tool_call is not None:
            raise ProtocolError("blind agent must answer in text, not tool calls")
        try:
            reply = _parse_blind_reply(response.text or "")
        except ReplyFormatError as first:
            response = session.send(
                repair_message(str(first), "query: ...\nplan:\nname = tool(args)")
            )
            if response.tool_call is not None:
                raise ProtocolError("blind agent must answer in text, not tool calls")
            try:
                reply = _parse_blind_reply(response.text or "")
            except ReplyFormatError as second:
                err = ProtocolError(f"blind: {second}", raw=response.text)
                raise err from second

        recorder.attach_parsed(
            {"query": reply.rewritten_query, "plan": reply.plan_text}
        )
        try:
            executed = execute_plan(reply.plan, meta, grounder=backends.grounder)
        except (PlanError, FeatureUnavailableError) as exc:
            if isinstance(exc, PlanError):
                exc.plan_text = reply.plan_text
            raise
        for warning in executed.warnings:
            recorder.note(1, "blind", warning)
        if not executed.segments:
            raise ProtocolError("blind plan selected no frames", raw=reply.plan_text)
    except (ProtocolError, BackendError, BudgetError, PlanError,
            FeatureUnavailableError) as exc:
        exc.transcript = recorder.entries
        raise

    recorder.note(
        1, "blind", f"plan produced segments {executed.segments.to_pairs()}",
        parsed={"segments": executed.segments.to_pairs()},
    )
    return ScreeningResult(
        pair=ScreeningPair(video=executed.segments, query=reply.rewritten_query),
        rounds=1,
        transcript=tuple(recorder.entries),
        terminated_by="final_answer",
    )
