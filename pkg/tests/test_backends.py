from __future__ import annotations

import json
import os

import pytest

from tvskit.backends import (
    ChatMessage,
    ChatResponse,
    ChatSession,
    HttpChatBackend,
    MockCaptioner,
    MockGrounder,
    MockJudge,
    ScriptedChatBackend,
    ScriptRouter,
    SidecarCaptioner,
    ToolCall,
    text_reply,
    tool_reply,
)
from tvskit.errors import (
    BackendError,
    BudgetError,
    MissingCaptionError,
    MockMismatchError,
    ValidationError,
)
from tvskit.transcript import Recorder


class TestScriptedBackend:
    def test_replays_in_order(self):
        backend = ScriptedChatBackend([text_reply("one"), text_reply("two")])
        assert backend.complete([ChatMessage("user", "a")]).text == "one"
        assert backend.complete([ChatMessage("user", "b")]).text == "two"
        backend.assert_exhausted()

    def test_matcher_mismatch_fails_with_diff(self):
        backend = ScriptedChatBackend([text_reply("ok", match="expected words")])
        with pytest.raises(MockMismatchError, match="expected words"):
            backend.complete([ChatMessage("user", "something else")])

    def test_exhausted_script_fails(self):
        backend = ScriptedChatBackend([])
        with pytest.raises(MockMismatchError, match="exhausted"):
            backend.complete([ChatMessage("user", "a")])

    def test_unconsumed_entries_fail_teardown(self):
        backend = ScriptedChatBackend([text_reply("never used")])
        with pytest.raises(MockMismatchError, match="never consumed"):
            backend.assert_exhausted()

    def test_tool_reply(self):
        backend = ScriptedChatBackend([tool_reply("caption_at", {"timestamp": 3.0})])
        response = backend.complete([ChatMessage("user", "a")])
        assert response.tool_call == ToolCall("caption_at", {"timestamp": 3.0})


class TestChatSession:
    def test_budget_exhaustion(self):
        backend = ScriptedChatBackend([text_reply("x")])
        session = ChatSession(backend, budget=1)
        session.send("first")
        with pytest.raises(BudgetError):
            session.send("second")

    def test_role_alternation_enforced(self):
        backend = ScriptedChatBackend([])
        session = ChatSession(backend, system="sys")
        with pytest.raises(ValidationError):
            session.append(ChatMessage("assistant", "out of turn"))

    def test_exchanges_recorded_exactly_once(self):
        recorder = Recorder()
        backend = ScriptedChatBackend([text_reply("a"), text_reply("b")])
        session = ChatSession(backend, recorder=recorder, tag="t", round_no=2)
        session.send("one")
        session.send("two")
        roles = [(e.role, e.content) for e in recorder.entries]
        assert roles == [
            ("user", "one"), ("assistant", "a"),
            ("user", "two"), ("assistant", "b"),
        ]
        assert all(e.round == 2 and e.kind == "t" for e in recorder.entries)

    def test_budget_safety_counting_wrapper(self):
        class Counting:
            def __init__(self, inner):
                self.inner, self.calls = inner, 0

            def complete(self, messages, tools=None):
                self.calls += 1
                return self.inner.complete(messages, tools)

        counting = Counting(ScriptedChatBackend([text_reply(str(i)) for i in range(3)]))
        session = ChatSession(counting, budget=3)
        for i in range(3):
            session.send(f"m{i}")
        with pytest.raises(BudgetError):
            session.send("over")
        assert counting.calls == 3


class TestScriptRouter:
    def test_routes_by_item(self, tmp_path):
        script = {
            "items": {"a": [{"text": "for a"}]},
            "default": [{"text": "fallback"}],
        }
        path = tmp_path / "script.json"
        path.write_text(json.dumps(script))
        router = ScriptRouter.from_file(str(path))
        assert router.for_item("a").complete([ChatMessage("user", "x")]).text == "for a"
        assert router.for_item("zzz").complete([ChatMessage("user", "x")]).text == "fallback"

    def test_same_item_shares_backend(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(json.dumps({"items": {"a": [{"text": "1"}, {"text": "2"}]}}))
        router = ScriptRouter.from_file(str(path))
        first = router.for_item("a")
        assert first is router.for_item("a")


class TestCaptioners:
    def test_mock_sentinel(self):
        captioner = MockCaptioner()
        assert captioner.caption(42, 1.4) == "CAP[42]"
        assert captioner.calls == 1

    def test_sidecar_hit_and_miss(self, tmp_path):
        path = tmp_path / "caps.jsonl"
        path.write_text('{"frame_index": 3, "caption": "stirring the pot"}\n')
        captioner = SidecarCaptioner.from_jsonl(str(path))
        assert captioner.caption(3, 0.1) == "stirring the pot"
        with pytest.raises(MissingCaptionError) as err:
            captioner.caption(9, 0.3)
        assert err.value.frame_index == 9


class TestJudge:
    def test_exact_match_scores(self):
        judge = MockJudge()
        assert judge.judge("orig?", "same", "same") == 100.0
        assert judge.judge("orig?", "different", "same") == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            MockJudge().judge("", "a", "b")


class TestGrounder:
    def test_scope_restriction(self):
        grounder = MockGrounder({"sauce": [1, 5, 9]})
        assert grounder.select("sauce", None) == [1, 5, 9]
        assert grounder.select("sauce", [5, 9, 11]) == [5, 9]
        assert grounder.select("pan", None) == []
        assert len(grounder.calls) == 3


class FakeHttp:
    """Stub for the pooled HTTP session, capturing payloads."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.payloads = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.payloads.append(json)
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply


class FakeResponse:
    def __init__(self, status_code, body):
        self.status_code = status_code
        self._body = body

    def json(self):
        return self._body


class TestHttpChatBackend:
    def test_requires_endpoint(self, monkeypatch):
        monkeypatch.delenv("TVS_LLM_ENDPOINT", raising=False)
        monkeypatch.delenv("TVS_LLM_MODEL", raising=False)
        from tvskit.errors import FeatureUnavailableError

        with pytest.raises(FeatureUnavailableError):
            HttpChatBackend()

    def test_parses_text_choice(self, monkeypatch):
        backend = HttpChatBackend(endpoint="http://x/v1/chat", model="m", api_key="k")
        fake = FakeHttp([
            FakeResponse(200, {"choices": [{"message": {"content": "hello"}}]})
        ])
        backend._http = fake
        out = backend.complete([ChatMessage("user", "hi")])
        assert out.text == "hello"
        assert fake.payloads[0]["model"] == "m"
        assert fake.payloads[0]["messages"][-1] == {"role": "user", "content": "hi"}

    def test_parses_tool_call(self, monkeypatch):
        backend = HttpChatBackend(endpoint="http://x", model="m")
        body = {
            "choices": [{
                "message": {
                    "content": None,
                    "tool_calls": [{
                        "type": "function",
                        "function": {"name": "caption_at",
                                     "arguments": '{"timestamp": 2.5}'},
                    }],
                }
            }]
        }
        backend._http = FakeHttp([FakeResponse(200, body)])
        out = backend.complete([ChatMessage("user", "hi")])
        assert out.tool_call == ToolCall("caption_at", {"timestamp": 2.5})

    def test_retries_then_fails(self, monkeypatch):
        backend = HttpChatBackend(endpoint="http://x", model="m", max_retries=3)
        monkeypatch.setattr("tvskit.backends.time.sleep", lambda s: None)
        fake = FakeHttp([FakeResponse(500, {}), FakeResponse(502, {}), FakeResponse(503, {})])
        backend._http = fake
        with pytest.raises(BackendError, match="3 attempts"):
            backend.complete([ChatMessage("user", "hi")])
        assert len(fake.payloads) == 3

    def test_non_retryable_client_error(self, monkeypatch):
        backend = HttpChatBackend(endpoint="http://x", model="m")
        fake = FakeHttp([FakeResponse(400, {})])
        backend._http = fake
        with pytest.raises(BackendError, match="400"):
            backend.complete([ChatMessage("user", "hi")])
        assert len(fake.payloads) == 1


@pytest.mark.skipif(
    not os.environ.get("TVS_LLM_ENDPOINT"),
    reason="live smoke test needs TVS_LLM_ENDPOINT",
)
def test_live_smoke():
    backend = HttpChatBackend()
    out = backend.complete([ChatMessage("user", "Reply with the word: ok")])
    assert out.text


def test_chat_response_exactly_one_side():
    with pytest.raises(ValidationError):
        ChatResponse()
    with pytest.raises(ValidationError):
        ChatResponse(text="x", tool_call=ToolCall("t", {}))
