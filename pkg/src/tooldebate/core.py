"""Domain types shared across the engine, plus label normalization.

Everything here is a frozen value object except :class:`DebateHistory`,
which is append-only.
"""

from __future__ import annotations

import enum
import re
import string
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterable, Mapping


class ToolDebateError(Exception):
    """Base class for all errors raised by this package."""


class UnparsableVerdict(ToolDebateError):
    def __init__(self, raw: str):
        super().__init__(f"no verdict label matches {raw!r}")
        self.raw = raw


class FileUnreadable(ToolDebateError):
    pass


class ProtocolError(ToolDebateError):
    """A debate-protocol precondition was violated by the caller."""


SUPPORTS = "SUPPORTS"
REFUTES = "REFUTES"
NOT_ENOUGH_INFO = "NOT_ENOUGH_INFO"

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}\u2013\u2014\u2018\u2019\u201c\u201d]+")
_WS = re.compile(r"\s+")


def _key(text: str) -> str:
    # "Not_Enough-Info." -> "not enough info"
    text = _PUNCT.sub(" ", text.replace("_", " ").lower())
    return _WS.sub(" ", text).strip()


DEFAULT_ALIASES: dict[str, tuple[str, ...]] = {
    SUPPORTS: ("supports", "support", "supported", "true", "correct", "entailment"),
    REFUTES: ("refutes", "refute", "refuted", "false", "incorrect", "contradiction"),
    NOT_ENOUGH_INFO: (
        "not enough info",
        "not enough information",
        "nei",
        "insufficient evidence",
        "insufficient information",
        "unverifiable",
        "unknown",
    ),
}


class LabelSet:
    """A closed set of verdict labels with their textual aliases.

    Each canonical label is always its own alias, which is what makes
    :func:`normalize_label` idempotent.
    """

    def __init__(self, aliases: Mapping[str, Iterable[str]], fallback: str | None = None):
        if not aliases:
            raise ValueError("label set must contain at least one label")
        self.labels: tuple[str, ...] = tuple(aliases)
        table: dict[str, str] = {}
        for label, names in aliases.items():
            for name in (label, *names):
                k = _key(name)
                if not k:
                    continue
                other = table.setdefault(k, label)
                if other != label:
                    raise ValueError(f"alias {name!r} maps to both {other} and {label}")
        self._table = MappingProxyType(table)
        if fallback is None:
            fallback = NOT_ENOUGH_INFO if NOT_ENOUGH_INFO in self.labels else self.labels[-1]
        if fallback not in self.labels:
            raise ValueError(f"fallback {fallback!r} is not a label")
        self.fallback = fallback

    @classmethod
    def default(cls) -> LabelSet:
        return cls(DEFAULT_ALIASES)

    @classmethod
    def from_config(cls, data: Mapping[str, Any] | Iterable[str] | None) -> LabelSet:
        """Build from ``{"LABEL": [aliases...]}`` or a bare list of labels.

        Bare labels that appear in the default table inherit its aliases.
        """
        if data is None:
            return cls.default()
        if isinstance(data, Mapping):
            return cls({k: tuple(v or ()) for k, v in data.items()})
        return cls({label: DEFAULT_ALIASES.get(label, ()) for label in data})

    def lookup(self, text: str) -> str | None:
        return self._table.get(_key(text))

    def aliases(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {label: [] for label in self.labels}
        for alias, label in self._table.items():
            out[label].append(alias)
        return out

    def __contains__(self, label: object) -> bool:
        return label in self.labels

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LabelSet) and dict(self._table) == dict(other._table)

    def __hash__(self) -> int:
        return hash(tuple(sorted(self._table.items())))

    def __repr__(self) -> str:
        return f"LabelSet({list(self.labels)!r})"


@dataclass(frozen=True)
class Verdict:
    label: str
    raw_text: str = ""

    def __str__(self) -> str:
        return self.label


def normalize_label(raw: str, label_set: LabelSet | None = None) -> Verdict:
    """Map a free-text label span onto the active label set.

    Matching is whole-span, case- and punctuation-insensitive; there is
    no substring search, so ``"the claim is probably fine"`` does not
    parse even though it contains no conflicting words.

    Raises:
        UnparsableVerdict: no alias matches.
    """
    if not raw or not raw.strip():
        raise ValueError("raw label text must be non-empty")
    label_set = label_set or LabelSet.default()
    label = label_set.lookup(raw)
    if label is None:
        raise UnparsableVerdict(raw)
    return Verdict(label=label, raw_text=raw)


def exact_match(
    pred: Verdict | str, gold: Verdict | str, label_set: LabelSet | None = None
) -> bool:
    """True iff both sides normalize to the same label."""

    def as_label(v: Verdict | str) -> str:
        text = v.label if isinstance(v, Verdict) else v
        return normalize_label(text, label_set).label

    return as_label(pred) == as_label(gold)


class AgentKind(str, enum.Enum):
    RAG = "RAG"
    SEARCH = "SEARCH"
    VANILLA = "VANILLA"
    JUDGE = "JUDGE"


DEBATER_KINDS = (AgentKind.RAG, AgentKind.SEARCH, AgentKind.VANILLA)


@dataclass(frozen=True)
class AgentId:
    kind: AgentKind
    name: str = ""

    def __post_init__(self):
        if not self.name:
            object.__setattr__(self, "name", self.kind.value)

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Claim:
    id: str
    text: str
    gold_label: Verdict | None = None
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError(f"claim {self.id!r} has empty text")
        object.__setattr__(self, "metadata", MappingProxyType(dict(self.metadata)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "gold_label": self.gold_label.label if self.gold_label else None,
            "metadata": dict(self.metadata),
        }


@dataclass(frozen=True)
class EvidenceDocument:
    source_id: str
    text: str
    score: float | None  # None marks a rank-only result
    tool: AgentKind

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"document {self.source_id!r} has empty text")

    def to_dict(self) -> dict[str, Any]:
        return {
            "source_id": self.source_id,
            "text": self.text,
            "score": self.score,
            "tool": self.tool.value,
        }


@dataclass(frozen=True)
class StabilityScore:
    faithfulness: float
    answer_relevance: float
    n_statements: int = 0
    n_supported: int = 0
    n_questions: int = 0
    degenerate: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "faithfulness": self.faithfulness,
            "answer_relevance": self.answer_relevance,
            "n_statements": self.n_statements,
            "n_supported": self.n_supported,
            "n_questions": self.n_questions,
            "degenerate": self.degenerate,
        }


@dataclass(frozen=True)
class AgentResponse:
    agent: AgentId
    round: int
    query: str
    documents: tuple[EvidenceDocument, ...]
    verdict: Verdict
    rationale: str
    text: str  # full model output, fed to the opponent and the scorers
    stability: StabilityScore | None = None

    def __post_init__(self):
        if self.round < 1:
            raise ValueError("round numbers start at 1")
        object.__setattr__(self, "documents", tuple(self.documents))

    def to_dict(self) -> dict[str, Any]:
        return {
            "agent": self.agent.name,
            "kind": self.agent.kind.value,
            "round": self.round,
            "query": self.query,
            "documents": [d.to_dict() for d in self.documents],
            "verdict": self.verdict.label,
            "verdict_raw": self.verdict.raw_text,
            "rationale": self.rationale,
            "text": self.text,
            "stability": self.stability.to_dict() if self.stability else None,
        }


@dataclass(frozen=True)
class RoundRecord:
    round: int
    responses: tuple[AgentResponse, ...]
    consensus: bool
    gate_passed: bool
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "responses", tuple(self.responses))
        object.__setattr__(self, "flags", tuple(self.flags))
        if not self.responses:
            raise ValueError("a round needs at least one response")
        if any(r.round != self.round for r in self.responses):
            raise ValueError(f"response round numbers disagree with round {self.round}")
        agreed = len({r.verdict.label for r in self.responses}) == 1
        if agreed != self.consensus:
            raise ValueError("consensus flag must equal verdict-label agreement")

    def to_dict(self) -> dict[str, Any]:
        return {
            "round": self.round,
            "consensus": self.consensus,
            "gate_passed": self.gate_passed,
            "flags": list(self.flags),
            "responses": [r.to_dict() for r in self.responses],
        }


class DebateHistory:
    """Append-only, contiguously numbered log of debate rounds."""

    def __init__(self, claim: Claim):
        self.claim = claim
        self._rounds: list[RoundRecord] = []

    @property
    def rounds(self) -> tuple[RoundRecord, ...]:
        return tuple(self._rounds)

    def __len__(self) -> int:
        return len(self._rounds)

    def append(self, record: RoundRecord) -> None:
        expected = len(self._rounds) + 1
        if record.round != expected:
            raise ProtocolError(f"expected round {expected}, got {record.round}")
        self._rounds.append(record)

    def last(self) -> RoundRecord | None:
        return self._rounds[-1] if self._rounds else None

    def to_dict(self) -> dict[str, Any]:
        return {"claim": self.claim.to_dict(), "rounds": [r.to_dict() for r in self._rounds]}


class Termination(str, enum.Enum):
    CONSENSUS = "CONSENSUS"
    JUDGE = "JUDGE"
    ABORTED = "ABORTED"


@dataclass(frozen=True)
class DebateOutcome:
    verdict: Verdict | None  # None only when aborted
    termination: Termination
    terminated_at_round: int
    history: DebateHistory
    aggregate_scores: Mapping[str, StabilityScore] = field(default_factory=dict)
    error: str | None = None
    judge_text: str | None = None
    backend_calls: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "aggregate_scores", MappingProxyType(dict(self.aggregate_scores)))
        object.__setattr__(self, "backend_calls", MappingProxyType(dict(self.backend_calls)))
        if self.termination is not Termination.ABORTED and self.verdict is None:
            raise ValueError("only aborted debates may lack a verdict")

    @property
    def aborted(self) -> bool:
        return self.termination is Termination.ABORTED

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict.label if self.verdict else None,
            "verdict_raw": self.verdict.raw_text if self.verdict else None,
            "termination": self.termination.value,
            "terminated_at_round": self.terminated_at_round,
            "aggregate_scores": {k: v.to_dict() for k, v in self.aggregate_scores.items()},
            "error": self.error,
            "judge_text": self.judge_text,
        }
