"""Retrieval tools: exact vector-index RAG, web search, and the null tool."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

import httpx
import numpy as np

from .backends import Backend, BackendUnavailable, ConfigError, post_with_retry
from .core import AgentKind, EvidenceDocument, FileUnreadable, ToolDebateError

logger = logging.getLogger(__name__)

INDEX_FORMAT = "tooldebate-index"
INDEX_VERSION = 1
DEFAULT_CHUNK_CHARS = 1000
DEFAULT_OVERLAP_CHARS = 200


class EmptyCorpus(ToolDebateError):
    pass


class SearchUnavailable(ToolDebateError):
    pass


@dataclass(frozen=True)
class CorpusChunk:
    chunk_id: str
    source_doc: str
    text: str
    embedding: np.ndarray

    def to_dict(self) -> dict[str, Any]:
        return {
            "chunk_id": self.chunk_id,
            "source_doc": self.source_doc,
            "text": self.text,
            "embedding": [float(x) for x in self.embedding],
        }


def window_starts(length: int, chunk_chars: int, overlap_chars: int) -> list[int]:
    """Start offsets of a sliding window; the last window reaches the end."""
    if not chunk_chars > overlap_chars >= 0:
        raise ValueError("need chunk_chars > overlap_chars >= 0")
    step = chunk_chars - overlap_chars
    starts = [0]
    while starts[-1] + chunk_chars < length:
        starts.append(starts[-1] + step)
    return starts


def chunk_text(text: str, chunk_chars: int, overlap_chars: int) -> list[str]:
    return [text[s : s + chunk_chars] for s in window_starts(len(text), chunk_chars, overlap_chars)]


class VectorIndex:
    """Immutable exhaustive cosine index.

    Results are ordered by descending similarity, ties by ascending
    ``chunk_id``. Zero-norm embeddings score 0 against every query.
    """

    def __init__(self, chunks: Sequence[CorpusChunk], dim: int):
        self.chunks: tuple[CorpusChunk, ...] = tuple(chunks)
        self.dim = dim
        for c in self.chunks:
            if c.embedding.shape != (dim,):
                raise ValueError(f"chunk {c.chunk_id} has dim {c.embedding.shape}, index dim {dim}")
        if len({c.chunk_id for c in self.chunks}) != len(self.chunks):
            raise ValueError("duplicate chunk ids")
        self._matrix = (
            np.stack([c.embedding for c in self.chunks]) if self.chunks else np.zeros((0, dim))
        )
        self._norms = np.linalg.norm(self._matrix, axis=1)
        # rank of each chunk id in ascending order, used as the tie-break key
        order = sorted(range(len(self.chunks)), key=lambda i: self.chunks[i].chunk_id)
        self._id_rank = np.empty(len(self.chunks), dtype=np.int64)
        self._id_rank[order] = np.arange(len(self.chunks))

    def __len__(self) -> int:
        return len(self.chunks)

    def similarities(self, query: np.ndarray) -> np.ndarray:
        q = np.asarray(query, dtype=float)
        if q.shape != (self.dim,):
            raise ValueError(f"query dim {q.shape} != index dim {self.dim}")
        qn = np.linalg.norm(q)
        denom = self._norms * qn
        with np.errstate(invalid="ignore", divide="ignore"):
            sims = np.where(denom > 0, (self._matrix @ q) / np.where(denom > 0, denom, 1.0), 0.0)
        return np.clip(sims, -1.0, 1.0)

    def search(self, query: np.ndarray, k: int) -> list[tuple[CorpusChunk, float]]:
        if k < 1:
            raise ValueError("k must be >= 1")
        sims = self.similarities(query)
        # rank on rounded values so float noise cannot split exact ties
        order = np.lexsort((self._id_rank, -np.round(sims, 12)))[:k]
        return [(self.chunks[i], float(sims[i])) for i in order]

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "dim": self.dim,
            "chunks": [c.to_dict() for c in self.chunks],
        }

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> VectorIndex:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise FileUnreadable(f"cannot read index {path}: {exc}") from exc
        if data.get("format") != INDEX_FORMAT:
            raise FileUnreadable(f"{path} is not an index file")
        if data.get("version") != INDEX_VERSION:
            raise FileUnreadable(f"unsupported index version {data.get('version')}")
        chunks = [
            CorpusChunk(
                chunk_id=c["chunk_id"],
                source_doc=c["source_doc"],
                text=c["text"],
                embedding=np.asarray(c["embedding"], dtype=float),
            )
            for c in data["chunks"]
        ]
        return cls(chunks, dim=data["dim"])


def read_corpus(path: str | os.PathLike) -> list[tuple[str, str]]:
    """Read ``{"id": ..., "text": ...}`` JSONL; blank lines are ignored."""
    docs = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    docs.append((str(rec["id"]), str(rec["text"])))
                except (ValueError, KeyError, TypeError) as exc:
                    raise FileUnreadable(f"{path}:{lineno}: bad corpus record ({exc})") from exc
    except OSError as exc:
        raise FileUnreadable(f"cannot read corpus {path}: {exc}") from exc
    return docs


def ingest_corpus(
    documents: Iterable[tuple[str, str]],
    backend: Backend,
    chunk_chars: int = DEFAULT_CHUNK_CHARS,
    overlap_chars: int = DEFAULT_OVERLAP_CHARS,
    batch_size: int = 64,
) -> VectorIndex:
    """Chunk every document by character window and embed the chunks."""
    if not chunk_chars > overlap_chars >= 0:
        raise ValueError("need chunk_chars > overlap_chars >= 0")
    pending: list[tuple[str, str, str]] = []
    for doc_id, text in documents:
        if not text.strip():
            continue
        for i, piece in enumerate(chunk_text(text, chunk_chars, overlap_chars)):
            pending.append((f"{doc_id}#{i:05d}", doc_id, piece))
    if not pending:
        raise EmptyCorpus("no non-empty documents to index")
    chunks = []
    for start in range(0, len(pending), batch_size):
        batch = pending[start : start + batch_size]
        vectors = backend.embed([t for _, _, t in batch])
        for (cid, doc, text), vec in zip(batch, vectors):
            chunks.append(CorpusChunk(cid, doc, text, vec))
    logger.info("indexed %d chunks (dim %d)", len(chunks), backend.dim)
    return VectorIndex(chunks, dim=backend.dim)


# --------------------------------------------------------------------------
# Search clients
# --------------------------------------------------------------------------


class SearchClient(Protocol):
    def search(self, query: str, max_results: int) -> list[dict[str, Any]]:
        """Return ``[{"url", "content", "score"}, ...]`` best first."""


def query_hash(query: str) -> str:
    return hashlib.sha256(query.encode()).hexdigest()


def write_search_fixture(directory: str | os.PathLike, query: str, results: list[dict]) -> Path:
    path = Path(directory) / f"{query_hash(query)}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"query": query, "results": results}, indent=2, sort_keys=True))
    return path


class FixtureSearchClient:
    """Canned search results, from a fixture directory or an in-memory map.

    Unknown queries return no results.
    """

    def __init__(
        self,
        directory: str | os.PathLike | None = None,
        results: Mapping[str, list[dict[str, Any]]] | None = None,
    ):
        self.directory = Path(directory) if directory else None
        self._mem = {query_hash(q): list(r) for q, r in (results or {}).items()}

    def search(self, query: str, max_results: int) -> list[dict[str, Any]]:
        key = query_hash(query)
        if key in self._mem:
            return self._mem[key][:max_results]
        if self.directory is None:
            return []
        path = self.directory / f"{key}.json"
        if not path.exists():
            return []
        try:
            data = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise SearchUnavailable(f"broken search fixture {path}: {exc}") from exc
        return list(data.get("results", []))[:max_results]


class TavilySearchClient:
    """Client for a Tavily-style ``POST /search`` endpoint."""

    def __init__(
        self,
        api_key: str,
        base_url: str = "https://api.tavily.com",
        *,
        max_attempts: int = 3,
        backoff: float = 0.5,
        timeout: float = 30.0,
        client: httpx.Client | None = None,
    ):
        if not api_key:
            raise ConfigError("SEARCH_API_KEY is not set")
        self.api_key = api_key
        self.base_url = base_url.rstrip("/")
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **kw) -> TavilySearchClient:
        env = os.environ if env is None else env
        return cls(env.get("SEARCH_API_KEY", ""), **kw)

    def search(self, query: str, max_results: int) -> list[dict[str, Any]]:
        body = post_with_retry(
            self._client,
            f"{self.base_url}/search",
            {"api_key": self.api_key, "query": query, "max_results": max_results},
            max_attempts=self.max_attempts,
            backoff=self.backoff,
            error=SearchUnavailable,
        )
        return list(body.get("results", []))[:max_results]


# --------------------------------------------------------------------------
# Tools
# --------------------------------------------------------------------------


class RetrievalTool:
    kind: AgentKind

    def __init__(self, k: int = 3):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k

    def retrieve(self, query: str, k: int | None = None, *, round: int | None = None,
                 agent: str | None = None) -> list[EvidenceDocument]:
        if not query or not query.strip():
            raise ValueError("query must be non-empty")
        k = self.k if k is None else k
        if k < 1:
            raise ValueError("k must be >= 1")
        return self._retrieve(query, k, round=round, agent=agent)

    def _retrieve(self, query, k, *, round, agent) -> list[EvidenceDocument]:
        raise NotImplementedError


class VanillaTool(RetrievalTool):
    kind = AgentKind.VANILLA

    def _retrieve(self, query, k, *, round, agent):
        return []


class RagTool(RetrievalTool):
    kind = AgentKind.RAG

    def __init__(self, index: VectorIndex, backend: Backend, k: int = 3):
        super().__init__(k)
        if backend.dim != index.dim:
            raise ConfigError(f"backend dim {backend.dim} != index dim {index.dim}")
        self.index = index
        self.backend = backend

    def _retrieve(self, query, k, *, round, agent):
        (vec,) = self.backend.embed([query], round=round, agent=agent)
        return [
            EvidenceDocument(c.chunk_id, c.text, score, AgentKind.RAG)
            for c, score in self.index.search(vec, k)
        ]


class SearchTool(RetrievalTool):
    kind = AgentKind.SEARCH

    def __init__(self, client: SearchClient, k: int = 3, max_doc_chars: int = 2000):
        super().__init__(k)
        self.client = client
        self.max_doc_chars = max_doc_chars

    def _retrieve(self, query, k, *, round, agent):
        try:
            results = self.client.search(query, k)
        except (BackendUnavailable, httpx.HTTPError) as exc:
            raise SearchUnavailable(str(exc)) from exc
        docs = []
        for rank, r in enumerate(results):
            text = (r.get("content") or "").strip()[: self.max_doc_chars]
            if not text:
                continue
            docs.append(
                EvidenceDocument(
                    source_id=r.get("url") or f"result-{rank}",
                    text=text,
                    score=r.get("score"),
                    tool=AgentKind.SEARCH,
                )
            )
        return docs[:k]
