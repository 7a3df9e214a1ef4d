"""Per-response stability score: faithfulness and answer relevance.

Faithfulness is the share of a response's factual statements that the
backend judges inferable from the retrieved context. Answer relevance is
the mean cosine similarity between the claim and questions generated
back from the response.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .backends import Backend, ChatRequest, ZeroVector, cosine
from .core import StabilityScore, ToolDebateError
from .prompts import RETRY_LINES_SUFFIX, STRICT_YES_NO_SUFFIX, PromptSet

logger = logging.getLogger(__name__)

DEFAULT_N_QUESTIONS = 3


class NoQuestionsGenerated(ToolDebateError):
    pass


class EmptyScoreList(ToolDebateError):
    pass


@dataclass(frozen=True)
class StabilityThresholds:
    faithfulness_min: float = 0.7
    relevance_min: float = 0.8
    strict: bool = False  # strict ">" instead of inclusive ">="

    def __post_init__(self):
        for name in ("faithfulness_min", "relevance_min"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class StatementSet:
    statements: tuple[str, ...]
    source_answer: str

    def __len__(self) -> int:
        return len(self.statements)


@dataclass(frozen=True)
class FaithfulnessResult:
    score: float
    statements: tuple[str, ...]
    verdicts: tuple[int, ...]
    context_substituted: bool = False

    @property
    def n_statements(self) -> int:
        return len(self.statements)

    @property
    def n_supported(self) -> int:
        return sum(self.verdicts)

    @property
    def degenerate(self) -> bool:
        return not self.statements


@dataclass(frozen=True)
class RelevanceResult:
    score: float
    questions: tuple[str, ...]
    similarities: tuple[float, ...]
    degenerate: bool


_LIST_MARKER = re.compile(r"^\s*(?:[-*•]|\d+[.)]|\(\d+\))\s+")


def _lines(text: str) -> list[str]:
    out = []
    for line in text.splitlines():
        line = _LIST_MARKER.sub("", line).strip()
        if line:
            out.append(line)
    return out


def _ask(backend: Backend, prompt: str, tag: str, round: int | None, agent: str | None) -> str:
    return backend.chat(ChatRequest.user(prompt, tag=tag, round=round, agent=agent))


def decompose_statements(
    answer: str,
    backend: Backend,
    prompts: PromptSet | None = None,
    *,
    round: int | None = None,
    agent: str | None = None,
) -> StatementSet:
    if not answer.strip():
        raise ValueError("answer must be non-empty")
    prompts = prompts or PromptSet.default()
    prompt = prompts.decompose.render(answer=answer)
    lines = _lines(_ask(backend, prompt, "decompose", round, agent))
    if not lines:
        lines = _lines(_ask(backend, prompt + RETRY_LINES_SUFFIX, "decompose", round, agent))
    return StatementSet(tuple(lines), answer)


def _yes_no(text: str) -> int | None:
    words = re.findall(r"[a-z]+", text.lower())
    if not words:
        return None
    return {"yes": 1, "no": 0}.get(words[0])


def verify_statement(
    statement: str,
    context: str,
    backend: Backend,
    prompts: PromptSet | None = None,
    *,
    fallback_context: str | None = None,
    round: int | None = None,
    agent: str | None = None,
) -> int:
    """1 if the backend says ``statement`` follows from ``context``, else 0.

    An empty context is replaced by ``fallback_context`` when given.
    Replies that are neither yes nor no get one stricter retry, then count
    as unsupported.
    """
    if not statement.strip():
        raise ValueError("statement must be non-empty")
    if not context.strip() and fallback_context:
        context = fallback_context
    prompts = prompts or PromptSet.default()
    prompt = prompts.verify.render(statement=statement, context=context or "(no context)")
    verdict = _yes_no(_ask(backend, prompt, "verify", round, agent))
    if verdict is None:
        verdict = _yes_no(_ask(backend, prompt + STRICT_YES_NO_SUFFIX, "verify", round, agent))
    return verdict if verdict is not None else 0


def faithfulness(
    answer: str,
    context: str,
    backend: Backend,
    prompts: PromptSet | None = None,
    *,
    fallback_context: str | None = None,
    round: int | None = None,
    agent: str | None = None,
) -> FaithfulnessResult:
    statements = decompose_statements(answer, backend, prompts, round=round, agent=agent)
    substituted = not context.strip() and bool(fallback_context)
    verdicts = tuple(
        verify_statement(
            s, context, backend, prompts, fallback_context=fallback_context, round=round, agent=agent
        )
        for s in statements.statements
    )
    score = sum(verdicts) / len(verdicts) if verdicts else 0.0
    return FaithfulnessResult(score, statements.statements, verdicts, substituted)


def generate_questions(
    answer: str,
    n: int,
    backend: Backend,
    prompts: PromptSet | None = None,
    *,
    round: int | None = None,
    agent: str | None = None,
) -> list[str]:
    """Up to ``n`` questions the answer would respond to; fewer is tolerated."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not answer.strip():
        raise ValueError("answer must be non-empty")
    prompts = prompts or PromptSet.default()
    prompt = prompts.questions.render(answer=answer, n=n)
    questions = _lines(_ask(backend, prompt, "gen-questions", round, agent))
    if not questions:
        questions = _lines(_ask(backend, prompt + RETRY_LINES_SUFFIX, "gen-questions", round, agent))
    if not questions:
        raise NoQuestionsGenerated("backend produced no questions after one retry")
    return questions[:n]


def answer_relevance(
    question: str,
    answer: str,
    n: int,
    backend: Backend,
    prompts: PromptSet | None = None,
    *,
    round: int | None = None,
    agent: str | None = None,
) -> RelevanceResult:
    """Mean cosine between ``question`` and questions generated from ``answer``.

    The divisor is the number of questions actually generated. A zero
    embedding contributes similarity 0 and marks the result degenerate.
    """
    if not question.strip():
        raise ValueError("question must be non-empty")
    questions = generate_questions(answer, n, backend, prompts, round=round, agent=agent)
    original, *generated = backend.embed([question, *questions], round=round, agent=agent)
    sims = []
    degenerate = False
    for vec in generated:
        try:
            sims.append(cosine(original, vec))
        except ZeroVector:
            sims.append(0.0)
            degenerate = True
    return RelevanceResult(sum(sims) / len(sims), tuple(questions), tuple(sims), degenerate)


def score_response(
    claim: str,
    answer: str,
    context: str,
    backend: Backend,
    prompts: PromptSet | None = None,
    *,
    n_questions: int = DEFAULT_N_QUESTIONS,
    round: int | None = None,
    agent: str | None = None,
) -> StabilityScore:
    """Full stability score for one response.

    With no retrieved context the claim text stands in as the faithfulness
    context. If no questions can be generated, relevance is 0 and the score
    is flagged degenerate.
    """
    f = faithfulness(answer, context, backend, prompts, fallback_context=claim, round=round, agent=agent)
    try:
        ar = answer_relevance(claim, answer, n_questions, backend, prompts, round=round, agent=agent)
    except NoQuestionsGenerated:
        logger.warning("no questions generated for %s round %s; relevance set to 0", agent, round)
        ar = RelevanceResult(0.0, (), (), True)
    return StabilityScore(
        faithfulness=f.score,
        answer_relevance=ar.score,
        n_statements=f.n_statements,
        n_supported=f.n_supported,
        n_questions=len(ar.questions),
        degenerate=f.degenerate or ar.degenerate,
    )


def gate(score: StabilityScore, thresholds: StabilityThresholds | None = None) -> bool:
    t = thresholds or StabilityThresholds()
    if t.strict:
        return score.faithfulness > t.faithfulness_min and score.answer_relevance > t.relevance_min
    return score.faithfulness >= t.faithfulness_min and score.answer_relevance >= t.relevance_min


def _mean(values: Sequence[float]) -> float:
    # exact rational mean, so identical inputs come back bit-for-bit
    return float(sum(Fraction(v) for v in values) / len(values))


def aggregate(per_round: Sequence[StabilityScore]) -> StabilityScore:
    """Componentwise mean across rounds; counts are rounded means."""
    if not per_round:
        raise EmptyScoreList("cannot aggregate an empty score list")
    return StabilityScore(
        faithfulness=_mean([s.faithfulness for s in per_round]),
        answer_relevance=_mean([s.answer_relevance for s in per_round]),
        n_statements=round(_mean([s.n_statements for s in per_round])),
        n_supported=round(_mean([s.n_supported for s in per_round])),
        n_questions=round(_mean([s.n_questions for s in per_round])),
        degenerate=any(s.degenerate for s in per_round),
    )
