"""Pluggable model backends: chat LLM, frame captioner, object grounder, judge.

Agent modules depend only on the small protocols here. Each protocol has a
live HTTP client speaking the common chat-completions wire shape and a
deterministic scripted mock; the mocks consume their scripts strictly in
order so full pipeline runs are byte-reproducible.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import requests

from .errors import (
    BackendError,
    BudgetError,
    FeatureUnavailableError,
    MissingCaptionError,
    MockMismatchError,
    ValidationError,
)

ENV_LLM_ENDPOINT = "TVS_LLM_ENDPOINT"
ENV_LLM_MODEL = "TVS_LLM_MODEL"
ENV_LLM_API_KEY = "TVS_LLM_API_KEY"
ENV_CAPTION_ENDPOINT = "TVS_CAPTION_ENDPOINT"

DEFAULT_SESSION_BUDGET = 32


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict


@dataclass(frozen=True)
class ToolSpec:
    """Function-call schema advertised to the chat backend."""

    name: str
    description: str
    parameters: dict

    def to_wire(self) -> dict:
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters,
            },
        }


@dataclass(frozen=True)
class ChatResponse:
    text: str | None = None
    tool_call: ToolCall | None = None

    def __post_init__(self) -> None:
        if (self.text is None) == (self.tool_call is None):
            raise ValidationError("ChatResponse carries exactly one of text/tool_call")


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant | tool
    content: str
    tool_call: ToolCall | None = None

    def to_wire(self) -> dict:
        if self.tool_call is not None:
            return {
                "role": self.role,
                "content": self.content or None,
                "tool_calls": [
                    {
                        "id": "call_0",
                        "type": "function",
                        "function": {
                            "name": self.tool_call.name,
                            "arguments": json.dumps(self.tool_call.arguments),
                        },
                    }
                ],
            }
        return {"role": self.role, "content": self.content}


class ChatBackend(Protocol):
    def complete(
        self, messages: Sequence[ChatMessage], tools: Sequence[ToolSpec] | None = None
    ) -> ChatResponse: ...


_VALID_AFTER = {
    None: {"system", "user"},
    "system": {"user"},
    "user": {"assistant"},
    "assistant": {"user", "tool"},
    "tool": {"assistant", "tool"},
}


class ChatSession:
    """One conversation: message history plus a completion budget.

    The budget counts backend completions and decrements monotonically;
    exhausting it raises BudgetError before the call is made. When a
    recorder is attached every message is mirrored into the run
    transcript exactly once.
    """

    def __init__(
        self,
        backend: ChatBackend,
        budget: int = DEFAULT_SESSION_BUDGET,
        tools: Sequence[ToolSpec] | None = None,
        system: str | None = None,
        recorder=None,
        tag: str = "",
        round_no: int = 0,
    ):
        self.backend = backend
        self.budget = budget
        self.tools = list(tools) if tools else None
        self.messages: list[ChatMessage] = []
        self.recorder = recorder
        self.tag = tag
        self.round_no = round_no
        if system is not None:
            self.append(ChatMessage("system", system))

    def append(self, message: ChatMessage) -> None:
        last = self.messages[-1].role if self.messages else None
        if message.role not in _VALID_AFTER.get(last, set()):
            raise ValidationError(f"role {message.role!r} cannot follow {last!r}")
        self.messages.append(message)
        if self.recorder is not None:
            content = message.content
            if message.tool_call is not None:
                content = json.dumps(
                    {"tool": message.tool_call.name, "arguments": message.tool_call.arguments},
                    sort_keys=True,
                )
            self.recorder.add(self.round_no, message.role, self.tag, content)

    def send(self, content: str, role: str = "user") -> ChatResponse:
        if self.budget <= 0:
            raise BudgetError("chat session budget exhausted")
        self.append(ChatMessage(role, content))
        self.budget -= 1
        response = self.backend.complete(self.messages, tools=self.tools)
        if response.tool_call is not None:
            self.append(ChatMessage("assistant", "", tool_call=response.tool_call))
        else:
            self.append(ChatMessage("assistant", response.text or ""))
        return response

    def send_tool_result(self, content: str) -> ChatResponse:
        return self.send(content, role="tool")


class HttpChatBackend:
    """Chat-completions client: POST {model, messages, tools?} and read choice 0.

    One shared handle serves concurrent sessions over a bounded connection
    pool; retry jitter is seeded so live runs stay as reproducible as the
    transport allows.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        temperature: float = 0.0,
        jitter_seed: int = 0,
        pool_size: int = 8,
    ):
        self.endpoint = endpoint or os.environ.get(ENV_LLM_ENDPOINT)
        self.model = model or os.environ.get(ENV_LLM_MODEL)
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_LLM_API_KEY)
        if not self.endpoint or not self.model:
            raise FeatureUnavailableError(
                f"chat backend needs {ENV_LLM_ENDPOINT} and {ENV_LLM_MODEL}"
            )
        self.timeout = timeout
        self.max_retries = max_retries
        self.temperature = temperature
        self.pool_size = pool_size
        self._rng = random.Random(jitter_seed)
        self._http = requests.Session()
        adapter = requests.adapters.HTTPAdapter(
            pool_connections=pool_size, pool_maxsize=pool_size
        )
        self._http.mount("http://", adapter)
        self._http.mount("https://", adapter)

    def complete(
        self, messages: Sequence[ChatMessage], tools: Sequence[ToolSpec] | None = None
    ) -> ChatResponse:
        payload: dict[str, Any] = {
            "model": self.model,
            "messages": [m.to_wire() for m in messages],
            "temperature": self.temperature,
        }
        if tools:
            payload["tools"] = [t.to_wire() for t in tools]
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = self._http.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
                if resp.status_code >= 500:
                    raise BackendError(f"server error {resp.status_code}", retryable=True)
                if resp.status_code != 200:
                    raise BackendError(f"chat endpoint returned {resp.status_code}")
                return self._parse(resp.json())
            except (requests.RequestException, BackendError) as exc:
                if isinstance(exc, BackendError) and not exc.retryable:
                    raise
                last_error = exc
                if attempt + 1 < self.max_retries:
                    time.sleep((2**attempt) * 0.5 * (1.0 + self._rng.random()))
        raise BackendError(f"chat backend failed after {self.max_retries} attempts: {last_error}",
                           retryable=True)

    @staticmethod
    def _parse(body: dict) -> ChatResponse:
        try:
            message = body["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat completion body: {exc}") from exc
        calls = message.get("tool_calls")
        if calls:
            fn = calls[0]["function"]
            args = fn.get("arguments") or "{}"
            return ChatResponse(
                tool_call=ToolCall(fn["name"], json.loads(args) if isinstance(args, str) else args)
            )
        return ChatResponse(text=message.get("content") or "")


Matcher = Callable[[Sequence[ChatMessage]], bool]


@dataclass
class ScriptEntry:
    response: ChatResponse
    match: str | Matcher | None = None  # substring of the last message, or predicate

    def check(self, messages: Sequence[ChatMessage]) -> str | None:
        if self.match is None:
            return None
        last = messages[-1].content if messages else ""
        if callable(self.match):
            return None if self.match(messages) else "predicate matcher returned False"
        if self.match in last:
            return None
        return f"expected substring {self.match!r} in last message:\n{last}"


class ScriptedChatBackend:
    """Replays canned responses strictly in order; any mismatch fails loudly."""

    def __init__(self, entries: Sequence[ScriptEntry]):
        self.entries = list(entries)
        self.cursor = 0
        self.requests: list[list[ChatMessage]] = []

    def complete(
        self, messages: Sequence[ChatMessage], tools: Sequence[ToolSpec] | None = None
    ) -> ChatResponse:
        self.requests.append(list(messages))
        if self.cursor >= len(self.entries):
            raise MockMismatchError(
                f"scripted backend exhausted after {len(self.entries)} replies; "
                f"unexpected request:\n{messages[-1].content if messages else ''}"
            )
        entry = self.entries[self.cursor]
        problem = entry.check(messages)
        if problem is not None:
            raise MockMismatchError(f"scripted entry {self.cursor}: {problem}")
        self.cursor += 1
        return entry.response

    def assert_exhausted(self) -> None:
        if self.cursor != len(self.entries):
            raise MockMismatchError(
                f"{len(self.entries) - self.cursor} scripted replies were never consumed"
            )


def text_reply(text: str, match: str | Matcher | None = None) -> ScriptEntry:
    return ScriptEntry(ChatResponse(text=text), match)


def tool_reply(name: str, arguments: dict, match: str | Matcher | None = None) -> ScriptEntry:
    return ScriptEntry(ChatResponse(tool_call=ToolCall(name, arguments)), match)


class ScriptRouter:
    """Per-item script store for batch runs; safe under concurrent items."""

    def __init__(self, scripts: dict[str, list[ScriptEntry]], default: list[ScriptEntry] | None = None):
        self._scripts = scripts
        self._default = default
        self._issued: dict[str, ScriptedChatBackend] = {}
        self._lock = threading.Lock()

    def for_item(self, item_id: str) -> ScriptedChatBackend:
        with self._lock:
            if item_id not in self._issued:
                entries = self._scripts.get(item_id)
                if entries is None:
                    if self._default is None:
                        raise MockMismatchError(f"no script for item {item_id!r}")
                    entries = self._default
                self._issued[item_id] = ScriptedChatBackend(list(entries))
            return self._issued[item_id]

    @classmethod
    def from_file(cls, path: str) -> "ScriptRouter":
        """Load scripts from JSON: {"items": {id: [reply,...]}, "default": [...]}.

        A reply is {"text": ...} or {"tool": name, "arguments": {...}},
        optionally with "match".
        """
        with open(path) as fh:
            raw = json.load(fh)

        def entry(rec: dict) -> ScriptEntry:
            match = rec.get("match")
            if "text" in rec:
                return text_reply(rec["text"], match)
            if "tool" in rec:
                return tool_reply(rec["tool"], rec.get("arguments", {}), match)
            raise ValidationError(f"script reply needs 'text' or 'tool': {rec}")

        items = {k: [entry(r) for r in v] for k, v in raw.get("items", {}).items()}
        default = [entry(r) for r in raw["default"]] if "default" in raw else None
        return cls(items, default)


class CaptionBackend(Protocol):
    def caption(self, frame_index: int, timestamp: float) -> str: ...


class MockCaptioner:
    """Sentinel captions, unique per frame, for deterministic tests."""

    def __init__(self) -> None:
        self.calls = 0

    def caption(self, frame_index: int, timestamp: float) -> str:
        self.calls += 1
        return f"CAP[{frame_index}]"


class SidecarCaptioner:
    """Serves captions precomputed offline; a miss is an explicit error."""

    def __init__(self, captions: dict[int, str]):
        self.captions = dict(captions)

    @classmethod
    def from_jsonl(cls, path: str) -> "SidecarCaptioner":
        captions: dict[int, str] = {}
        with open(path) as fh:
            for line in fh:
                if not line.strip() or line.startswith("#"):
                    continue
                rec = json.loads(line)
                if "frame_index" in rec:
                    captions[int(rec["frame_index"])] = rec["caption"]
        return cls(captions)

    def caption(self, frame_index: int, timestamp: float) -> str:
        if frame_index not in self.captions:
            raise MissingCaptionError(frame_index)
        return self.captions[frame_index]


class HttpCaptioner:
    def __init__(self, endpoint: str | None = None, timeout: float = 60.0):
        self.endpoint = endpoint or os.environ.get(ENV_CAPTION_ENDPOINT)
        if not self.endpoint:
            raise FeatureUnavailableError(f"captioner needs {ENV_CAPTION_ENDPOINT}")
        self.timeout = timeout

    def caption(self, frame_index: int, timestamp: float) -> str:
        try:
            resp = requests.post(
                self.endpoint,
                json={"frame_index": frame_index, "timestamp": timestamp},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise BackendError(f"caption endpoint unreachable: {exc}", retryable=True) from exc
        if resp.status_code != 200:
            raise BackendError(f"caption endpoint returned {resp.status_code}", retryable=True)
        return resp.json()["caption"]


class GrounderBackend(Protocol):
    def select(self, obj_name: str, indices: list[int] | None) -> list[int]: ...


class MockGrounder:
    """Scripted object -> frame indices lookup."""

    low_fidelity = False

    def __init__(self, table: dict[str, list[int]]):
        self.table = {k: sorted(set(v)) for k, v in table.items()}
        self.calls: list[tuple[str, list[int] | None]] = []

    def select(self, obj_name: str, indices: list[int] | None) -> list[int]:
        self.calls.append((obj_name, list(indices) if indices is not None else None))
        hits = self.table.get(obj_name, [])
        if indices is None:
            return list(hits)
        scope = set(indices)
        return [i for i in hits if i in scope]


class JudgeBackend(Protocol):
    def judge(self, original_q: str, rewritten_q: str, gt_rewrite: str) -> float: ...


class MockJudge:
    """Exact-match judge: 100 on equality, 0 otherwise."""

    def judge(self, original_q: str, rewritten_q: str, gt_rewrite: str) -> float:
        for name, value in (("original_q", original_q), ("rewritten_q", rewritten_q),
                            ("gt_rewrite", gt_rewrite)):
            if not value.strip():
                raise ValidationError(f"{name} must be non-empty")
        return 100.0 if rewritten_q.strip() == gt_rewrite.strip() else 0.0


class LlmJudge:
    """Judge backed by a chat model; the rubric lives in the prompt template."""

    def __init__(self, backend: ChatBackend, prompt_template: str):
        self.backend = backend
        self.prompt_template = prompt_template

    def judge(self, original_q: str, rewritten_q: str, gt_rewrite: str) -> float:
        for name, value in (("original_q", original_q), ("rewritten_q", rewritten_q),
                            ("gt_rewrite", gt_rewrite)):
            if not value.strip():
                raise ValidationError(f"{name} must be non-empty")
        prompt = self.prompt_template.format(
            original=original_q, rewritten=rewritten_q, reference=gt_rewrite
        )
        reply = self.backend.complete([ChatMessage("user", prompt)])
        if reply.text is None:
            raise BackendError("judge backend returned a tool call instead of a score")
        try:
            score = float(reply.text.strip().split()[0])
        except (ValueError, IndexError) as exc:
            raise BackendError(f"judge reply is not a score: {reply.text!r}") from exc
        if not 0.0 <= score <= 100.0:
            raise BackendError(f"judge score {score} outside [0, 100]")
        return score


@dataclass
class BackendBundle:
    """Everything one screening run needs; members are shareable handles."""

    chat: ChatBackend
    captioner: CaptionBackend | None = None
    grounder: GrounderBackend | None = None
    judge: JudgeBackend | None = None
    extras: dict = field(default_factory=dict)
