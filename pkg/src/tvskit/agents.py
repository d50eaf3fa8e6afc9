"""The iterative screening loop and its single-agent variant.

Each round, a video-blind launcher proposes a rewritten query plus a
trimming instruction from the query and the run histories alone. A
validator then judges the instruction by executing it: it may ask the
viewer to scan ranges or localize text, and ends the round either with a
trimmed segment set (committed, success history appended, failure history
cleared) or with a failure reason (failure history appended, launcher
re-invoked with the feedback). A stop decision returns the last committed
state; a configurable round cap bounds the loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .backends import BackendBundle, ChatSession, ToolSpec
from .errors import (
    BackendError,
    BudgetError,
    ProtocolError,
    ValidationError,
)
from .intervals import ScreeningPair, SegmentSet, TimeRange, VideoMeta, total_duration
from .prompts import PromptLibrary
from .replies import (
    ReplyFormatError,
    parse_float_field,
    parse_segments_field,
    parse_tagged,
    repair_message,
    require,
)
from .transcript import Recorder, TranscriptEntry
from .viewer import KeyframeIndex, Viewer, caption_lines, prep


@dataclass(frozen=True)
class ScreeningConfig:
    max_rounds: int = 4
    view_budget: int = 6
    tool_budget: int = 8
    session_budget: int = 32

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValidationError(f"max_rounds must be >= 1, got {self.max_rounds}")
        for name in ("view_budget", "tool_budget", "session_budget"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")


@dataclass(frozen=True)
class LauncherOutput:
    decision: str  # proceed | stop
    rewritten_query: str = ""
    trimming_instruction: str = ""

    def __post_init__(self) -> None:
        if self.decision not in ("proceed", "stop"):
            raise ValidationError(f"launcher decision must be proceed/stop, got {self.decision!r}")
        if self.decision == "proceed" and not (
            self.rewritten_query.strip() and self.trimming_instruction.strip()
        ):
            raise ValidationError("proceed requires a rewritten query and an instruction")


@dataclass(frozen=True)
class ValidatorOutput:
    judgement: str  # succeeded | failed | view
    request: dict | None = None
    result: SegmentSet | None = None
    reason: str | None = None

    def __post_init__(self) -> None:
        if self.judgement == "succeeded" and not self.result:
            raise ValidationError("succeeded requires a non-empty result")
        if self.judgement == "failed" and not self.reason:
            raise ValidationError("failed requires a reason")
        if self.judgement == "view" and not self.request:
            raise ValidationError("view requires a request")
        if self.judgement not in ("succeeded", "failed", "view"):
            raise ValidationError(f"unknown judgement {self.judgement!r}")


@dataclass
class HistoryTracker:
    """Ordered (query_before, query_after, instruction) memory."""

    kind: str  # success | failure
    entries: list[tuple[str, str, str]] = field(default_factory=list)

    def append(self, query_before: str, query_after: str, instruction: str) -> None:
        self.entries.append((query_before, query_after, instruction))

    def empty(self) -> None:
        self.entries.clear()

    def render(self) -> str:
        if not self.entries:
            return "(none)"
        lines = []
        for i, (before, after, instruction) in enumerate(self.entries, start=1):
            lines.append(f"{i}. from: {before}")
            lines.append(f"   to: {after}")
            lines.append(f"   instruction: {instruction}")
        return "\n".join(lines)


@dataclass(frozen=True)
class ScreeningResult:
    pair: ScreeningPair
    rounds: int
    transcript: tuple[TranscriptEntry, ...]
    terminated_by: str  # launcher_stop | round_cap | final_answer

    def to_record(self, item_id: str | None = None) -> dict:
        record = {
            "item_id": item_id,
            "segments": self.pair.video.to_pairs(),
            "rewritten_query": self.pair.query,
            "rounds": self.rounds,
            "terminated_by": self.terminated_by,
            "transcript": [e.to_dict() for e in self.transcript],
        }
        if item_id is None:
            record.pop("item_id")
        return record


def _structured_reply(session: ChatSession, prompt: str, parse, expected: str, tag: str):
    """One exchange with a single repair re-prompt on malformed output."""
    response = session.send(prompt)
    if response.tool_call is not None:
        raise ProtocolError(f"{tag}: unexpected tool call")
    try:
        return parse(response.text or "")
    except ReplyFormatError as first:
        response = session.send(repair_message(str(first), expected))
        if response.tool_call is not None:
            raise ProtocolError(f"{tag}: unexpected tool call after repair")
        try:
            return parse(response.text or "")
        except ReplyFormatError as second:
            raise ProtocolError(f"{tag}: {second}", raw=response.text) from second


def launcher_step(
    q_prev: str,
    sh: HistoryTracker,
    fh: HistoryTracker,
    llm,
    prompts: PromptLibrary,
    recorder: Recorder,
    round_no: int,
    session_budget: int = 32,
) -> LauncherOutput:
    """Single-turn, video-free exchange proposing the next refinement."""
    prompt = prompts.render(
        "launcher",
        query=q_prev,
        success_history=sh.render(),
        failure_history=fh.render(),
    )
    session = ChatSession(
        llm, budget=session_budget, recorder=recorder, tag="launcher", round_no=round_no
    )

    def parse(text: str) -> dict:
        fields = parse_tagged(text)
        require(fields, "decision")
        decision = fields["decision"].strip().lower()
        if decision == "stop":
            return {"decision": "stop", "query": "", "instruction": ""}
        if decision != "proceed":
            raise ReplyFormatError(f"decision must be proceed or stop, got {decision!r}")
        require(fields, "query", "instruction")
        return {
            "decision": "proceed",
            "query": fields["query"].strip(),
            "instruction": fields["instruction"].strip(),
        }

    parsed = _structured_reply(
        session, prompt, parse,
        "decision: proceed or stop\nquery: ...\ninstruction: ...",
        "launcher",
    )
    recorder.attach_parsed(parsed)
    return LauncherOutput(
        decision=parsed["decision"],
        rewritten_query=parsed["query"],
        trimming_instruction=parsed["instruction"],
    )


@dataclass
class ValidatorRound:
    status: str  # succeeded | failed
    segments: SegmentSet | None = None
    reason: str | None = None
    views_used: int = 0
    clamped: bool = False


def _parse_validator_reply(text: str, duration: float) -> ValidatorOutput:
    fields = parse_tagged(text)
    require(fields, "judgement")
    judgement = fields["judgement"].strip().lower()
    if judgement == "view":
        require(fields, "action")
        action = fields["action"].strip().lower()
        if action == "scan":
            start = parse_float_field(fields, "start")
            end = parse_float_field(fields, "end")
            if not 0.0 <= start < end:
                raise ReplyFormatError(f"scan range [{start}, {end}] is inverted")
            return ValidatorOutput(
                "view", request={"action": "scan", "start": start, "end": min(end, duration)}
            )
        if action == "localize":
            require(fields, "query")
            return ValidatorOutput(
                "view", request={"action": "localize", "query": fields["query"].strip()}
            )
        raise ReplyFormatError(f"unknown view action {action!r}")
    if judgement == "succeeded":
        pairs = parse_segments_field(fields)
        try:
            result = SegmentSet.from_pairs(pairs)
        except ValidationError as exc:
            raise ReplyFormatError(f"bad segments: {exc}") from exc
        if not result:
            raise ReplyFormatError("succeeded requires non-empty segments")
        return ValidatorOutput("succeeded", result=result)
    if judgement == "failed":
        require(fields, "reason")
        return ValidatorOutput("failed", reason=fields["reason"].strip())
    raise ReplyFormatError(f"judgement must be view/succeeded/failed, got {judgement!r}")


_VALIDATOR_EXPECTED = (
    "judgement: view | succeeded | failed\n"
    "with action/start/end, action/query, segments, or reason as documented"
)


def validator_step(
    q_prev: str,
    q_new: str,
    instruction: str,
    viewer: Viewer,
    llm,
    config: ScreeningConfig,
    recorder: Recorder,
    round_no: int,
) -> ValidatorRound:
    """Multi-turn feasibility-by-execution session over the viewer."""
    duration = viewer.index.video.duration
    prompt = viewer.prompts.render(
        "validator", query=q_prev, rewritten_query=q_new, instruction=instruction
    )
    session = ChatSession(
        llm, budget=config.session_budget, recorder=recorder, tag="validator",
        round_no=round_no,
    )
    views = 0
    message = prompt
    while True:
        parsed = _structured_reply(
            session, message, lambda t: _parse_validator_reply(t, duration),
            _VALIDATOR_EXPECTED, "validator",
        )
        recorder.attach_parsed(
            {
                "judgement": parsed.judgement,
                "request": parsed.request,
                "segments": parsed.result.to_pairs() if parsed.result else None,
                "reason": parsed.reason,
            }
        )
        if parsed.judgement == "view":
            views += 1
            if views > config.view_budget:
                reason = f"view budget ({config.view_budget}) exhausted"
                recorder.note(round_no, "validator", reason)
                return ValidatorRound("failed", reason=reason, views_used=views)
            try:
                if parsed.request["action"] == "scan":
                    summary = viewer.scan(
                        TimeRange(parsed.request["start"], parsed.request["end"])
                    )
                    message = f"viewer summary: {summary}"
                else:
                    located, _trace = viewer.localize(parsed.request["query"])
                    message = f"viewer localized range: {located.to_pair()}"
            except BudgetError as exc:
                reason = f"viewer budget exhausted: {exc}"
                recorder.note(round_no, "validator", reason)
                return ValidatorRound("failed", reason=reason, views_used=views)
            continue
        if parsed.judgement == "succeeded":
            clamped = parsed.result.clamped(0.0, duration)
            was_clamped = clamped.to_pairs() != parsed.result.to_pairs()
            if was_clamped:
                recorder.note(
                    round_no, "validator",
                    f"result clamped into [0, {duration}]",
                    parsed={"before": parsed.result.to_pairs(), "after": clamped.to_pairs()},
                )
            if not clamped:
                reason = "result lies entirely outside the video extent"
                recorder.note(round_no, "validator", reason)
                return ValidatorRound("failed", reason=reason, views_used=views)
            return ValidatorRound(
                "succeeded", segments=clamped, views_used=views, clamped=was_clamped
            )
        return ValidatorRound("failed", reason=parsed.reason, views_used=views)


def run_tvs(
    meta: VideoMeta,
    index: KeyframeIndex,
    query: str,
    backends: BackendBundle,
    config: ScreeningConfig | None = None,
    prompts: PromptLibrary | None = None,
) -> ScreeningResult:
    """Run the full iterative screening loop on one (video, query) pair."""
    if index.video.vid_name != meta.vid_name:
        raise ValidationError(
            f"index belongs to {index.video.vid_name!r}, not {meta.vid_name!r}"
        )
    config = config or ScreeningConfig()
    prompts = prompts or PromptLibrary.defaults()
    recorder = Recorder()

    committed_video = meta.full_video()
    committed_query = query
    sh = HistoryTracker("success")
    fh = HistoryTracker("failure")
    rounds = 0
    terminated_by = "round_cap"

    try:
        while True:
            if rounds >= config.max_rounds:
                terminated_by = "round_cap"
                recorder.note(rounds, "loop", f"round cap ({config.max_rounds}) reached")
                break
            launcher_out = launcher_step(
                committed_query, sh, fh, backends.chat, prompts, recorder,
                round_no=rounds + 1, session_budget=config.session_budget,
            )
            if launcher_out.decision == "stop":
                terminated_by = "launcher_stop"
                break
            viewer = Viewer(
                index,
                backends.chat,
                prompts=prompts,
                captioner=backends.captioner,
                tool_budget=config.tool_budget,
                recorder=recorder,
                round_no=rounds + 1,
            )
            outcome = validator_step(
                committed_query,
                launcher_out.rewritten_query,
                launcher_out.trimming_instruction,
                viewer,
                backends.chat,
                config,
                recorder,
                round_no=rounds + 1,
            )
            rounds += 1
            if outcome.status == "succeeded":
                previous_duration = total_duration(committed_video)
                new_duration = total_duration(outcome.segments)
                if new_duration > previous_duration + 1e-9:
                    recorder.note(
                        rounds, "loop", "committed round did not shrink the video",
                        parsed={
                            "round": rounds,
                            "previous_duration": previous_duration,
                            "new_duration": new_duration,
                        },
                    )
                sh.append(
                    committed_query,
                    launcher_out.rewritten_query,
                    launcher_out.trimming_instruction,
                )
                fh.empty()
                committed_video = outcome.segments
                committed_query = launcher_out.rewritten_query
            else:
                fh.append(
                    committed_query,
                    launcher_out.rewritten_query,
                    launcher_out.trimming_instruction,
                )
    except (ProtocolError, BackendError, BudgetError) as exc:
        exc.transcript = recorder.entries
        raise

    return ScreeningResult(
        pair=ScreeningPair(video=committed_video, query=committed_query),
        rounds=rounds,
        transcript=tuple(recorder.entries),
        terminated_by=terminated_by,
    )


SIMPLE_TOOLS = [
    ToolSpec(
        name="prep",
        description="List keyframe captions between two timestamps (seconds).",
        parameters={
            "type": "object",
            "properties": {"start": {"type": "number"}, "end": {"type": "number"}},
            "required": ["start", "end"],
        },
    ),
    ToolSpec(
        name="caption_at",
        description="Fetch the caption of the frame at a timestamp (seconds).",
        parameters={
            "type": "object",
            "properties": {"timestamp": {"type": "number"}},
            "required": ["timestamp"],
        },
    ),
    ToolSpec(
        name="localize",
        description="Find the time range where the described moment happens.",
        parameters={
            "type": "object",
            "properties": {"query": {"type": "string"}},
            "required": ["query"],
        },
    ),
]


def run_tvs_simple(
    meta: VideoMeta,
    index: KeyframeIndex,
    query: str,
    backends: BackendBundle,
    config: ScreeningConfig | None = None,
    prompts: PromptLibrary | None = None,
) -> ScreeningResult:
    """Single-agent variant: one session with the viewer surface as tools."""
    if index.video.vid_name != meta.vid_name:
        raise ValidationError(
            f"index belongs to {index.video.vid_name!r}, not {meta.vid_name!r}"
        )
    config = config or ScreeningConfig()
    prompts = prompts or PromptLibrary.defaults()
    recorder = Recorder()
    viewer = Viewer(
        index,
        backends.chat,
        prompts=prompts,
        captioner=backends.captioner,
        tool_budget=config.tool_budget,
        recorder=recorder,
        round_no=1,
    )
    session = ChatSession(
        backends.chat, budget=config.session_budget, tools=SIMPLE_TOOLS,
        recorder=recorder, tag="simple", round_no=1,
    )
    prompt = prompts.render("simple", query=query, duration=f"{meta.duration:g}")

    def parse_final(text: str) -> dict:
        fields = parse_tagged(text)
        pairs = parse_segments_field(fields)
        require(fields, "query")
        try:
            SegmentSet.from_pairs(pairs)
        except ValidationError as exc:
            raise ReplyFormatError(f"bad segments: {exc}") from exc
        return {"segments": pairs, "query": fields["query"].strip()}

    def dispatch(call) -> str:
        if call.name == "prep":
            pairs = prep(index, float(call.arguments["start"]), float(call.arguments["end"]))
            return caption_lines(pairs)
        if call.name == "caption_at":
            return viewer.serve_caption(float(call.arguments["timestamp"]), "simple")
        if call.name == "localize":
            located, _trace = viewer.localize(str(call.arguments["query"]))
            return f"localized range: {located.to_pair()}"
        raise ProtocolError(f"simple agent called unknown tool {call.name!r}")

    try:
        response = session.send(prompt)
        tool_calls = 0
        repaired = False
        while True:
            if response.tool_call is not None:
                tool_calls += 1
                if tool_calls > config.tool_budget:
                    raise ProtocolError(
                        f"no final answer within the tool budget ({config.tool_budget})"
                    )
                try:
                    result = dispatch(response.tool_call)
                except (KeyError, TypeError, ValueError) as exc:
                    raise ProtocolError(f"malformed tool call: {exc}") from exc
                response = session.send_tool_result(result)
                continue
            try:
                parsed = parse_final(response.text or "")
                break
            except ReplyFormatError as exc:
                if repaired:
                    raise ProtocolError(f"simple: {exc}", raw=response.text) from exc
                repaired = True
                response = session.send(
                    repair_message(str(exc), "segments: [[start, end]]\nquery: ...")
                )
    except (ProtocolError, BackendError, BudgetError) as exc:
        exc.transcript = recorder.entries
        raise

    recorder.attach_parsed(parsed)
    segments = SegmentSet.from_pairs(parsed["segments"]).clamped(0.0, meta.duration)
    if not segments:
        raise ProtocolError("simple agent returned segments outside the video extent")
    return ScreeningResult(
        pair=ScreeningPair(video=segments, query=parsed["query"]),
        rounds=1,
        transcript=tuple(recorder.entries),
        terminated_by="final_answer",
    )
