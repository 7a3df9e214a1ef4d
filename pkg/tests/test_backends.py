import json
import math

import httpx
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from tooldebate.backends import (
    BackendUnavailable,
    CallLog,
    ChatRequest,
    ConfigError,
    OpenAICompatBackend,
    ScriptedBackend,
    ScriptMiss,
    ZeroVector,
    cosine,
    track_calls,
)


def _mock_backend(handler, **kw):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    kw.setdefault("call_log", CallLog())
    return OpenAICompatBackend("http://llm.test/v1", "sk-test", "m", client=client, backoff=0, dim=2, **kw)


def test_scripted_first_match_wins():
    b = ScriptedBackend.from_dict({"chat": [
        {"tag": "respond", "contains": "alpha", "response": "first"},
        {"tag": "respond", "response": "second"},
        {"tag": "judge", "round": 3, "response": "judged"},
    ]})
    assert b.chat(ChatRequest.user("alpha beta", tag="respond")) == "first"
    assert b.chat(ChatRequest.user("gamma", tag="respond")) == "second"
    assert b.chat(ChatRequest.user("x", tag="judge", round=3)) == "judged"
    with pytest.raises(ScriptMiss):
        b.chat(ChatRequest.user("x", tag="judge", round=2))


def test_scripted_regex_and_agent():
    b = ScriptedBackend.from_dict({"chat": [
        {"tag": "verify", "regex": r"statement \d+", "agent": "RAG", "response": "yes"},
    ]})
    assert b.chat(ChatRequest.user("statement 7", tag="verify", agent="RAG")) == "yes"
    with pytest.raises(ScriptMiss):
        b.chat(ChatRequest.user("statement 7", tag="verify", agent="SEARCH"))


def test_unknown_tag_rejected():
    with pytest.raises(ValueError):
        ChatRequest.user("x", tag="chit-chat")
    with pytest.raises(ValueError):
        ScriptedBackend.from_dict({"chat": [{"tag": "chit-chat", "response": "x"}]})


def test_embed_determinism_and_table():
    b = ScriptedBackend.from_dict({"embeddings": {"q": [1, 0], "q1": [0, 1]}})
    q, q1 = b.embed(["q", "q1"])
    assert q.tolist() == [1.0, 0.0] and q1.tolist() == [0.0, 1.0]
    x1, x2 = b.embed(["x", "x"])
    assert np.array_equal(x1, x2)
    assert x1.shape == (2,) and np.all(np.isfinite(x1))
    assert math.isclose(np.linalg.norm(x1), 1.0)


def test_hash_embedding_stable_across_instances():
    a = ScriptedBackend(dim=16).embed(["hello"])[0]
    b = ScriptedBackend(dim=16).embed(["hello"])[0]
    assert np.array_equal(a, b) and a.shape == (16,)


def test_cosine_examples():
    v = np.array([3.0, -1.0, 2.0])
    assert cosine(v, v) == pytest.approx(1.0)
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    # oracle: dot / (|a| |b|) computed by hand: 32 / sqrt(14 * 77)
    oracle = (1 * 4 + 2 * 5 + 3 * 6) / math.sqrt((1 + 4 + 9) * (16 + 25 + 36))
    assert cosine(np.array([1, 2, 3.0]), np.array([4, 5, 6.0])) == pytest.approx(oracle, abs=1e-12)
    assert f"{oracle:.5f}" == "0.97463"


def test_cosine_errors():
    with pytest.raises(ZeroVector):
        cosine(np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        cosine(np.ones(2), np.ones(3))


vecs = arrays(np.float64, 5, elements=st.floats(-1e3, 1e3, allow_nan=False))


@given(vecs, vecs)
def test_cosine_symmetric_and_bounded(a, b):
    if np.linalg.norm(a) == 0 or np.linalg.norm(b) == 0:
        return
    assert cosine(a, b) == cosine(b, a)
    assert abs(cosine(a, b)) <= 1 + 1e-9


def test_call_log_records_every_call(tmp_path):
    log = CallLog(tmp_path / "calls.jsonl")
    b = ScriptedBackend.from_dict({"chat": [{"tag": "respond", "response": "ok"}]}, call_log=log)
    b.chat(ChatRequest.user("hello", tag="respond", round=1, agent="RAG"))
    b.embed(["a", "b"], round=1, agent="RAG")
    with pytest.raises(ScriptMiss):
        b.chat(ChatRequest.user("x", tag="judge"))
    lines = [json.loads(x) for x in (tmp_path / "calls.jsonl").read_text().splitlines()]
    assert [r["tag"] for r in lines] == ["respond", "embed", "judge"]
    assert lines[0]["prompt_chars"] == 5 and lines[0]["completion_chars"] == 2
    assert lines[0]["round"] == 1 and lines[0]["agent"] == "RAG"
    assert "error" in lines[2]
    for r in lines:
        assert {"tag", "round", "agent", "latency_ms", "prompt_chars", "completion_chars"} <= set(r)


def test_track_calls_counts_by_tag():
    b = ScriptedBackend.from_dict({"chat": [{"tag": "respond", "response": "ok"}]})
    with track_calls() as tally:
        b.chat(ChatRequest.user("x", tag="respond"))
        b.embed(["x"])
    assert dict(tally) == {"respond": 1, "embed": 1}


def test_networked_unreachable_retries_then_fails():
    attempts = []

    def handler(request):
        attempts.append(request.url.path)
        raise httpx.ConnectError("no route", request=request)

    b = _mock_backend(handler)
    with pytest.raises(BackendUnavailable):
        b.chat(ChatRequest.user("x", tag="respond"))
    assert len(attempts) == 3
    assert b.call_log.count() == 1 and "error" in b.call_log.records[0]


def test_networked_transient_then_success():
    replies = [httpx.Response(503), httpx.Response(429)]

    def handler(request):
        if replies:
            return replies.pop(0)
        body = json.loads(request.content)
        assert body["temperature"] == 0 and body["model"] == "m"
        assert request.headers["authorization"] == "Bearer sk-test"
        return httpx.Response(200, json={
            "choices": [{"message": {"content": "SUPPORTS"}}],
            "usage": {"prompt_tokens": 3, "completion_tokens": 1},
        })

    b = _mock_backend(handler)
    assert b.chat(ChatRequest.user("x", tag="respond")) == "SUPPORTS"
    assert b.call_log.count() == 1
    assert b.call_log.records[0]["completion_tokens"] == 1


def test_networked_client_error_not_retried():
    attempts = []

    def handler(request):
        attempts.append(1)
        return httpx.Response(401, text="bad key")

    with pytest.raises(BackendUnavailable):
        _mock_backend(handler).chat(ChatRequest.user("x", tag="respond"))
    assert attempts == [1]


def test_networked_embeddings_in_request_order():
    def handler(request):
        assert request.url.path.endswith("/embeddings")
        return httpx.Response(200, json={"data": [
            {"index": 1, "embedding": [0.0, 1.0]},
            {"index": 0, "embedding": [1.0, 0.0]},
        ]})

    a, b = _mock_backend(handler).embed(["a", "b"])
    assert a.tolist() == [1.0, 0.0] and b.tolist() == [0.0, 1.0]


def test_networked_embedding_dim_checked():
    def handler(request):
        return httpx.Response(200, json={"data": [{"index": 0, "embedding": [1.0, 0.0, 0.0]}]})

    with pytest.raises(BackendUnavailable):
        _mock_backend(handler).embed(["a"])


def test_from_env_requires_key():
    with pytest.raises(ConfigError):
        OpenAICompatBackend.from_env({})
    b = OpenAICompatBackend.from_env({"LLM_API_KEY": "k", "LLM_API_BASE": "http://x/v1/", "LLM_MODEL": "mm"})
    assert b.base_url == "http://x/v1" and b.model == "mm"
