"""Text generation and embedding backends.

Two implementations share one surface: :class:`OpenAICompatBackend` talks
to any server with OpenAI-style ``/chat/completions`` and ``/embeddings``
routes, and :class:`ScriptedBackend` replays canned responses for offline
runs and tests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from collections import Counter
from contextlib import contextmanager
from contextvars import ContextVar
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import httpx
import numpy as np

from .core import ToolDebateError

logger = logging.getLogger(__name__)

PURPOSES = frozenset(
    {"query-formulation", "respond", "decompose", "verify", "gen-questions", "judge"}
)
ROLES = frozenset({"system", "user", "assistant"})


class BackendUnavailable(ToolDebateError):
    pass


class ScriptMiss(ToolDebateError):
    """The scripted backend got a prompt no rule matches. Always a test bug."""


class ZeroVector(ToolDebateError):
    pass


class ConfigError(ToolDebateError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[tuple[str, str], ...]
    tag: str
    temperature: float = 0.0
    max_tokens: int = 512
    # call-log attribution only; never sent over the wire
    round: int | None = None
    agent: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(tuple(m) for m in self.messages))
        if not self.messages:
            raise ValueError("chat request needs at least one message")
        for role, _ in self.messages:
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}")
        if self.tag not in PURPOSES:
            raise ValueError(f"unknown prompt tag {self.tag!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @classmethod
    def user(cls, content: str, tag: str, system: str | None = None, **kw) -> ChatRequest:
        msgs = [("system", system)] if system else []
        msgs.append(("user", content))
        return cls(messages=tuple(msgs), tag=tag, **kw)

    @property
    def prompt(self) -> str:
        return "\n\n".join(content for _, content in self.messages)


class CallLog:
    """Thread-safe record of every outbound backend call.

    Records are kept in memory and, when ``path`` is given, appended to a
    newline-delimited JSON file as they happen.
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path else None
        self._records: list[dict[str, Any]] = []
        self._lock = threading.Lock()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def record(self, **fields: Any) -> None:
        with self._lock:
            self._records.append(fields)
            if self.path:
                with self.path.open("a") as fh:
                    fh.write(json.dumps(fields, sort_keys=True) + "\n")

    @property
    def records(self) -> list[dict[str, Any]]:
        with self._lock:
            return list(self._records)

    def count(self, tag: str | None = None) -> int:
        return sum(1 for r in self.records if tag is None or r["tag"] == tag)


_tally: ContextVar[Counter | None] = ContextVar("tooldebate_call_tally", default=None)


@contextmanager
def track_calls():
    """Count backend calls by tag made in the current context.

    Threads do not inherit the context; run worker functions through
    ``contextvars.copy_context().run`` to keep them counted.
    """
    counter: Counter = Counter()
    token = _tally.set(counter)
    try:
        yield counter
    finally:
        _tally.reset(token)


def _bump(tag: str) -> None:
    counter = _tally.get()
    if counter is not None:
        counter[tag] += 1


def _elapsed_ms(t0: float) -> float:
    return round((time.perf_counter() - t0) * 1000, 3)


class Backend:
    """Common surface; subclasses implement ``_chat`` and ``_embed``."""

    dim: int

    def __init__(self, call_log: CallLog | None = None):
        self.call_log = call_log if call_log is not None else CallLog()

    def chat(self, req: ChatRequest) -> str:
        _bump(req.tag)
        t0 = time.perf_counter()
        base = dict(tag=req.tag, round=req.round, agent=req.agent,
                    prompt_chars=sum(len(c) for _, c in req.messages))
        try:
            text, usage = self._chat(req)
        except Exception as exc:
            self.call_log.record(**base, latency_ms=_elapsed_ms(t0), completion_chars=0,
                                 error=type(exc).__name__)
            raise
        self.call_log.record(**base, latency_ms=_elapsed_ms(t0), completion_chars=len(text), **usage)
        return text

    def embed(self, texts: Sequence[str], *, round: int | None = None,
              agent: str | None = None) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed needs at least one text")
        if any(not t for t in texts):
            raise ValueError("cannot embed an empty string")
        _bump("embed")
        t0 = time.perf_counter()
        base = dict(tag="embed", round=round, agent=agent,
                    prompt_chars=sum(len(t) for t in texts), completion_chars=0)
        try:
            vectors = self._embed(list(texts))
        except Exception as exc:
            self.call_log.record(**base, latency_ms=_elapsed_ms(t0), error=type(exc).__name__)
            raise
        self.call_log.record(**base, latency_ms=_elapsed_ms(t0))
        if len(vectors) != len(texts):
            raise BackendUnavailable(f"asked for {len(texts)} embeddings, got {len(vectors)}")
        for v in vectors:
            if v.shape != (self.dim,) or not np.all(np.isfinite(v)):
                raise BackendUnavailable(f"malformed embedding of shape {v.shape}")
        return vectors

    def _chat(self, req: ChatRequest) -> tuple[str, dict[str, Any]]:
        raise NotImplementedError

    def _embed(self, texts: list[str]) -> list[np.ndarray]:
        raise NotImplementedError


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, clamped to [-1, 1].

    Raises:
        ZeroVector: either input has zero norm.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


# --------------------------------------------------------------------------
# Networked backend
# --------------------------------------------------------------------------

_TRANSIENT_STATUS = {408, 409, 429, 500, 502, 503, 504}


def post_with_retry(
    client: httpx.Client,
    url: str,
    payload: Mapping[str, Any],
    *,
    headers: Mapping[str, str] | None = None,
    max_attempts: int = 3,
    backoff: float = 0.5,
    error: type[Exception] = BackendUnavailable,
) -> dict[str, Any]:
    """POST JSON, retrying transport errors and transient statuses.

    Sleeps ``backoff * 2**i`` between attempts. Non-transient HTTP errors
    fail immediately.
    """
    last: Exception | None = None
    for attempt in range(max_attempts):
        if attempt:
            time.sleep(backoff * 2 ** (attempt - 1))
        try:
            resp = client.post(url, json=payload, headers=headers)
        except httpx.HTTPError as exc:
            last = exc
            logger.warning("POST %s failed (attempt %d/%d): %s", url, attempt + 1, max_attempts, exc)
            continue
        if resp.status_code in _TRANSIENT_STATUS:
            last = httpx.HTTPStatusError(f"status {resp.status_code}", request=resp.request, response=resp)
            logger.warning("POST %s returned %d (attempt %d/%d)", url, resp.status_code, attempt + 1, max_attempts)
            continue
        if resp.status_code >= 400:
            raise error(f"{url} returned {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise error(f"{url} returned non-JSON body") from exc
    raise error(f"{url} unreachable after {max_attempts} attempts: {last}")


class OpenAICompatBackend(Backend):
    def __init__(
        self,
        base_url: str,
        api_key: str,
        model: str,
        *,
        embedding_model: str = "text-embedding-3-small",
        dim: int = 1536,
        max_attempts: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        max_in_flight: int = 8,
        client: httpx.Client | None = None,
        call_log: CallLog | None = None,
    ):
        super().__init__(call_log)
        if not api_key:
            raise ConfigError("an API key is required for the networked backend")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.embedding_model = embedding_model
        self.dim = dim
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._headers = {"Authorization": f"Bearer {api_key}"}
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **kw) -> OpenAICompatBackend:
        env = os.environ if env is None else env
        key = env.get("LLM_API_KEY")
        if not key:
            raise ConfigError("LLM_API_KEY is not set")
        return cls(
            base_url=env.get("LLM_API_BASE", "https://api.openai.com/v1"),
            api_key=key,
            model=env.get("LLM_MODEL", "gpt-4o-mini"),
            **kw,
        )

    def _post(self, route: str, payload: dict[str, Any]) -> dict[str, Any]:
        with self._slots:
            return post_with_retry(
                self._client,
                f"{self.base_url}/{route}",
                payload,
                headers=self._headers,
                max_attempts=self.max_attempts,
                backoff=self.backoff,
            )

    def _chat(self, req: ChatRequest) -> tuple[str, dict[str, Any]]:
        body = self._post(
            "chat/completions",
            {
                "model": self.model,
                "messages": [{"role": r, "content": c} for r, c in req.messages],
                "temperature": req.temperature,
                "max_tokens": req.max_tokens,
            },
        )
        try:
            text = body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable("chat response has no choices[0].message.content") from exc
        usage = body.get("usage") or {}
        return text, {
            "prompt_tokens": usage.get("prompt_tokens"),
            "completion_tokens": usage.get("completion_tokens"),
        }

    def _embed(self, texts: list[str]) -> list[np.ndarray]:
        body = self._post("embeddings", {"model": self.embedding_model, "input": texts})
        try:
            data = sorted(body["data"], key=lambda d: d.get("index", 0))
            return [np.asarray(d["embedding"], dtype=float) for d in data]
        except (KeyError, TypeError) as exc:
            raise BackendUnavailable("embedding response has no data[].embedding") from exc


# --------------------------------------------------------------------------
# Scripted backend
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScriptRule:
    """One canned response.

    A rule matches when the tag is equal, every ``contains`` substring
    occurs somewhere in the prompt, ``regex`` (if set) searches the prompt,
    and ``round``/``agent`` (if set) equal the request's attribution.
    """

    tag: str
    response: str
    contains: tuple[str, ...] = ()
    regex: str | None = None
    round: int | None = None
    agent: str | None = None

    def matches(self, req: ChatRequest) -> bool:
        if req.tag != self.tag:
            return False
        if self.round is not None and req.round != self.round:
            return False
        if self.agent is not None and req.agent != self.agent:
            return False
        prompt = req.prompt
        if not all(s in prompt for s in self.contains):
            return False
        return self.regex is None or re.search(self.regex, prompt) is not None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ScriptRule:
        contains = d.get("contains", ())
        if isinstance(contains, str):
            contains = (contains,)
        if d["tag"] not in PURPOSES:
            raise ValueError(f"script rule has unknown tag {d['tag']!r}")
        return cls(
            tag=d["tag"],
            response=d["response"],
            contains=tuple(contains),
            regex=d.get("regex"),
            round=d.get("round"),
            agent=d.get("agent"),
        )


def hash_embedding(text: str, dim: int) -> np.ndarray:
    """Deterministic unit vector derived from SHA-256 of ``text``."""
    raw = bytearray()
    counter = 0
    while len(raw) < 4 * dim:
        raw += hashlib.sha256(f"{counter}:{text}".encode()).digest()
        counter += 1
    ints = np.frombuffer(bytes(raw[: 4 * dim]), dtype="<u4").astype(float)
    v = ints / 2**31 - 1.0
    return v / np.linalg.norm(v)


class ScriptedBackend(Backend):
    """Deterministic, offline backend driven by a rule list.

    Rules are tried in order and the first match wins. Embeddings come from
    ``embeddings`` on exact text hits, otherwise from :func:`hash_embedding`.

    A script loaded from file may also carry ``corpus`` and ``search``
    sections; they are kept on :attr:`extras` for the tool layer.
    """

    def __init__(
        self,
        rules: Iterable[ScriptRule] = (),
        embeddings: Mapping[str, Sequence[float]] | None = None,
        dim: int | None = None,
        call_log: CallLog | None = None,
        extras: Mapping[str, Any] | None = None,
    ):
        super().__init__(call_log)
        self.rules = tuple(rules)
        table = {k: np.asarray(v, dtype=float) for k, v in (embeddings or {}).items()}
        dims = {v.shape[0] for v in table.values()}
        if len(dims) > 1:
            raise ValueError(f"embedding table mixes dimensions {sorted(dims)}")
        if dims:
            (table_dim,) = dims
            if dim is not None and dim != table_dim:
                raise ValueError(f"dim={dim} conflicts with embedding table dim {table_dim}")
            dim = table_dim
        self.dim = dim or 16
        self.embedding_table = table
        self.extras = dict(extras or {})

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], call_log: CallLog | None = None) -> ScriptedBackend:
        return cls(
            rules=[ScriptRule.from_dict(r) for r in data.get("chat", ())],
            embeddings=data.get("embeddings"),
            dim=data.get("dim"),
            call_log=call_log,
            extras={k: v for k, v in data.items() if k not in {"chat", "embeddings", "dim"}},
        )

    @classmethod
    def from_file(cls, path: str | os.PathLike, call_log: CallLog | None = None) -> ScriptedBackend:
        with open(path) as fh:
            return cls.from_dict(json.load(fh), call_log=call_log)

    def _chat(self, req: ChatRequest) -> tuple[str, dict[str, Any]]:
        for rule in self.rules:
            if rule.matches(req):
                return rule.response, {}
        raise ScriptMiss(
            f"no script rule for tag={req.tag!r} round={req.round} agent={req.agent}: "
            f"{req.prompt[:120]!r}"
        )

    def _embed(self, texts: list[str]) -> list[np.ndarray]:
        out = []
        for t in texts:
            v = self.embedding_table.get(t)
            out.append(v.copy() if v is not None else hash_embedding(t, self.dim))
        return out
