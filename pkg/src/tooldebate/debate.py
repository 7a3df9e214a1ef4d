"""Two-debater, tool-augmented debate with stability gating and a judge fallback.

Each round, both debaters independently formulate a retrieval query, fetch
evidence with their own tool, and answer; round ``r > 1`` reads only the
state of round ``r - 1``. The debate stops early once both debaters give
the same label *and* both responses clear the stability gate. Otherwise
the judge decides after the last round.
"""

from __future__ import annotations

import contextvars
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

from .backends import Backend, BackendUnavailable, ChatRequest, track_calls
from .core import (
    DEBATER_KINDS,
    AgentId,
    AgentKind,
    AgentResponse,
    Claim,
    DebateHistory,
    DebateOutcome,
    EvidenceDocument,
    LabelSet,
    ProtocolError,
    RoundRecord,
    StabilityScore,
    Termination,
    UnparsableVerdict,
    Verdict,
)
from .prompts import STRICT_LABEL_SUFFIX, PromptSet
from .stability import (
    DEFAULT_N_QUESTIONS,
    StabilityThresholds,
    aggregate,
    gate,
    score_response,
)
from .tools import RetrievalTool, SearchUnavailable

logger = logging.getLogger(__name__)

NO_EVIDENCE = "(no evidence retrieved)"


@dataclass(frozen=True)
class DebateConfig:
    max_rounds: int = 3
    k: int = 3
    thresholds: StabilityThresholds = field(default_factory=StabilityThresholds)
    scoring_feedback: bool = True
    query_formulation: bool = True
    # False drops the agent's own previous query from follow-up query prompts
    query_uses_previous_query: bool = True
    n_questions: int = DEFAULT_N_QUESTIONS
    parallel_agents: bool = False
    label_set: LabelSet = field(default_factory=LabelSet.default)
    prompts: PromptSet = field(default_factory=PromptSet.default, compare=False)

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n_questions < 1:
            raise ValueError("n_questions must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_rounds": self.max_rounds,
            "k": self.k,
            "faithfulness_min": self.thresholds.faithfulness_min,
            "relevance_min": self.thresholds.relevance_min,
            "strict_thresholds": self.thresholds.strict,
            "scoring_feedback": self.scoring_feedback,
            "query_formulation": self.query_formulation,
            "query_uses_previous_query": self.query_uses_previous_query,
            "n_questions": self.n_questions,
            "parallel_agents": self.parallel_agents,
            "labels": {k: sorted(v) for k, v in self.label_set.aliases().items()},
        }


@dataclass(frozen=True)
class DebaterAgent:
    id: AgentId
    tool: RetrievalTool
    backend: Backend

    def __post_init__(self):
        if self.id.kind not in DEBATER_KINDS:
            raise ValueError(f"{self.id.kind} cannot be a debater")
        if self.tool.kind != self.id.kind:
            raise ValueError(f"agent {self.id} of kind {self.id.kind} has a {self.tool.kind} tool")

    @property
    def name(self) -> str:
        return self.id.name


@dataclass(frozen=True)
class JudgeAgent:
    backend: Backend
    id: AgentId = AgentId(AgentKind.JUDGE)

    def __post_init__(self):
        if self.id.kind is not AgentKind.JUDGE:
            raise ValueError("the judge must have kind JUDGE")


def transcript(outcome: DebateOutcome, config: DebateConfig) -> dict[str, Any]:
    """JSON-ready record of one debate."""
    h = outcome.history
    return {
        "claim": h.claim.to_dict(),
        "config": config.to_dict(),
        "rounds": [r.to_dict() for r in h.rounds],
        "outcome": outcome.to_dict(),
        "backend_calls": dict(sorted(outcome.backend_calls.items())),
    }


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_VERDICT_LINE = re.compile(r"^\W*verdict\W*[:\-]\s*(?P<span>.+?)\s*$", re.I | re.M)
_RATIONALE = re.compile(r"^\W*rationale\W*[:\-]\s*", re.I | re.M)
_LEAD_SPLIT = re.compile(r"\s*(?:[\u2014\u2013:;,.(\n]|\s-\s)\s*")


def _lead(span: str) -> str:
    return _LEAD_SPLIT.split(span.strip(), maxsplit=1)[0]


def parse_labelled(text: str, label_set: LabelSet) -> tuple[Verdict, str]:
    """Split a reply into its verdict and rationale.

    Looks for a ``VERDICT:`` line first, then falls back to the leading
    span of the first non-empty line (``"SUPPORTS - because ..."``).

    Raises:
        UnparsableVerdict: neither location holds a known label.
    """
    m = _VERDICT_LINE.search(text)
    if m:
        candidates = [m.group("span"), _lead(m.group("span"))]
    else:
        first = next((ln for ln in text.splitlines() if ln.strip()), "")
        candidates = [first.strip(), _lead(first)]
    verdict = None
    for span in candidates:
        if span.strip():
            label = label_set.lookup(span)
            if label is not None:
                verdict = Verdict(label, span.strip())
                break
    if verdict is None:
        raise UnparsableVerdict(text)

    r = _RATIONALE.search(text)
    if r:
        rationale = text[r.end():].strip()
    elif m:
        rationale = (text[: m.start()] + text[m.end():]).strip()
    else:
        stripped = text.strip()
        first_line, _, rest = stripped.partition("\n")
        after = first_line[first_line.find(verdict.raw_text) + len(verdict.raw_text):]
        rationale = (after.lstrip(" \t\u2014\u2013:;,.-") + ("\n" + rest if rest else "")).strip()
    return verdict, rationale or text.strip()


def _labels_hint(label_set: LabelSet) -> str:
    return ", ".join(label_set.labels)


def _generate_verdict(
    backend: Backend, prompt: str, tag: str, label_set: LabelSet, round: int | None, agent: str
) -> tuple[Verdict, str, str]:
    """Ask for a labelled reply; one strict retry, then the fallback label."""
    text = backend.chat(ChatRequest.user(prompt, tag=tag, round=round, agent=agent))
    try:
        verdict, rationale = parse_labelled(text, label_set)
        return verdict, rationale, text
    except UnparsableVerdict:
        logger.info("%s round %s: unparsable verdict, retrying", agent, round)
    retry = prompt + STRICT_LABEL_SUFFIX.format(labels=_labels_hint(label_set))
    text2 = backend.chat(ChatRequest.user(retry, tag=tag, round=round, agent=agent))
    try:
        verdict, rationale = parse_labelled(text2, label_set)
        return verdict, rationale, text2
    except UnparsableVerdict:
        raw = text2.strip() or text.strip() or "(empty reply)"
        return Verdict(label_set.fallback, raw), raw, raw


def render_documents(documents: Sequence[EvidenceDocument]) -> str:
    if not documents:
        return NO_EVIDENCE
    return "\n\n".join(f"[{i}] ({d.source_id}) {d.text}" for i, d in enumerate(documents, 1))


# --------------------------------------------------------------------------
# Protocol steps
# --------------------------------------------------------------------------


def formulate_query(
    agent: DebaterAgent,
    claim: Claim,
    config: DebateConfig,
    round: int = 1,
    opp_prev_answer: str | None = None,
    own_prev_query: str | None = None,
) -> tuple[str, bool]:
    """Return ``(query, fell_back)``.

    ``fell_back`` is true when the backend was unavailable and the claim
    text was used instead.
    """
    first = opp_prev_answer is None and own_prev_query is None
    if (round == 1) != first:
        raise ProtocolError("round 1 takes no prior answers; later rounds need both")
    if not config.query_formulation:
        return claim.text, False
    p = config.prompts
    if first:
        prompt = p.query_initial.render(claim=claim.text)
    elif config.query_uses_previous_query:
        prompt = p.query_followup.render(
            claim=claim.text, opponent_answer=opp_prev_answer, previous_query=own_prev_query
        )
    else:
        prompt = p.query_followup_noprev.render(claim=claim.text, opponent_answer=opp_prev_answer)
    try:
        text = agent.backend.chat(
            ChatRequest.user(prompt, tag="query-formulation", round=round, agent=agent.name)
        )
    except BackendUnavailable as exc:
        logger.warning("%s round %d: query formulation failed (%s); using claim", agent.name, round, exc)
        return claim.text, True
    for line in text.splitlines():
        line = re.sub(r"^\W*query\W*[:\-]\s*", "", line.strip(), flags=re.I).strip().strip("\"'`")
        if line:
            return line, False
    return claim.text, False


def respond(
    agent: DebaterAgent,
    claim: Claim,
    documents: Sequence[EvidenceDocument],
    config: DebateConfig,
    round: int = 1,
    query: str | None = None,
    opp_prev_answer: str | None = None,
) -> AgentResponse:
    if len(documents) > config.k:
        raise ProtocolError(f"{len(documents)} documents exceed k={config.k}")
    if (round == 1) != (opp_prev_answer is None):
        raise ProtocolError("only rounds after the first carry an opponent answer")
    labels = _labels_hint(config.label_set)
    docs = render_documents(documents)
    if round == 1:
        prompt = config.prompts.respond_initial.render(claim=claim.text, documents=docs, labels=labels)
    else:
        prompt = config.prompts.respond_followup.render(
            claim=claim.text, documents=docs, opponent_answer=opp_prev_answer, labels=labels
        )
    verdict, rationale, text = _generate_verdict(
        agent.backend, prompt, "respond", config.label_set, round, agent.name
    )
    return AgentResponse(
        agent=agent.id,
        round=round,
        query=query if query is not None else claim.text,
        documents=tuple(documents),
        verdict=verdict,
        rationale=rationale,
        text=text,
    )


def _agent_turn(
    agent: DebaterAgent,
    claim: Claim,
    config: DebateConfig,
    round: int,
    own_prev: AgentResponse | None,
    opp_prev: AgentResponse | None,
) -> tuple[AgentResponse, list[str]]:
    flags = []
    query, fell_back = formulate_query(
        agent,
        claim,
        config,
        round,
        opp_prev.text if opp_prev else None,
        own_prev.query if own_prev else None,
    )
    if fell_back:
        flags.append(f"query_fallback:{agent.name}")
    try:
        documents = agent.tool.retrieve(query, config.k, round=round, agent=agent.name)
    except SearchUnavailable as exc:
        logger.warning("%s round %d: search unavailable (%s)", agent.name, round, exc)
        documents = []
        flags.append(f"search_unavailable:{agent.name}")
    response = respond(
        agent, claim, documents, config, round, query, opp_prev.text if opp_prev else None
    )
    if config.scoring_feedback:
        context = "\n\n".join(d.text for d in documents)
        score = score_response(
            claim.text,
            response.text,
            context,
            agent.backend,
            config.prompts,
            n_questions=config.n_questions,
            round=round,
            agent=agent.name,
        )
        response = replace(response, stability=score)
    return response, flags


def run_round(
    history: DebateHistory, agents: Sequence[DebaterAgent], config: DebateConfig
) -> RoundRecord:
    """Execute the next round and append it to ``history``."""
    if len(agents) != 2:
        raise ProtocolError("exactly two debaters are required")
    if len(history) >= config.max_rounds:
        raise ProtocolError(f"history already has {len(history)} of {config.max_rounds} rounds")
    r = len(history) + 1
    prev = history.last()
    by_name = {resp.agent.name: resp for resp in prev.responses} if prev else {}

    def turn(i: int):
        me, opp = agents[i], agents[1 - i]
        return _agent_turn(me, history.claim, config, r, by_name.get(me.name), by_name.get(opp.name))

    if config.parallel_agents:
        with ThreadPoolExecutor(max_workers=2) as pool:
            futures = [pool.submit(contextvars.copy_context().run, turn, i) for i in range(2)]
            results = [f.result() for f in futures]
    else:
        results = [turn(i) for i in range(2)]

    responses = tuple(resp for resp, _ in results)
    flags = tuple(f for _, fl in results for f in fl)
    consensus = len({resp.verdict.label for resp in responses}) == 1
    if config.scoring_feedback:
        gate_passed = all(gate(resp.stability, config.thresholds) for resp in responses)
    else:
        gate_passed = True
    record = RoundRecord(r, responses, consensus, gate_passed, flags)
    history.append(record)
    return record


def render_history(history: DebateHistory) -> str:
    blocks = []
    for rec in history.rounds:
        for resp in rec.responses:
            evidence = render_documents(resp.documents)
            blocks.append(
                f"Round {rec.round}, {resp.agent.name} ({resp.agent.kind.value} tool)\n"
                f"Query: {resp.query}\n"
                f"Evidence:\n{evidence}\n"
                f"Answer:\n{resp.text.strip()}"
            )
    return "\n\n---\n\n".join(blocks)


def render_scores(aggregate_scores: Mapping[str, StabilityScore]) -> str:
    if not aggregate_scores:
        return "(not computed)"
    return "\n".join(
        f"{name}: faithfulness={s.faithfulness:.3f}, answer_relevance={s.answer_relevance:.3f}"
        for name, s in aggregate_scores.items()
    )


def judge(
    judge_agent: JudgeAgent,
    history: DebateHistory,
    aggregate_scores: Mapping[str, StabilityScore],
    claim: Claim,
    config: DebateConfig,
) -> tuple[Verdict, str]:
    """Return the judge's verdict and its full reply."""
    if len(history) != config.max_rounds:
        raise ProtocolError(f"the judge needs all {config.max_rounds} rounds, got {len(history)}")
    prompt = config.prompts.judge.render(
        claim=claim.text,
        history=render_history(history),
        scores=render_scores(aggregate_scores),
        labels=_labels_hint(config.label_set),
    )
    verdict, _, text = _generate_verdict(
        judge_agent.backend, prompt, "judge", config.label_set, None, judge_agent.id.name
    )
    return verdict, text


def _aggregate_scores(history: DebateHistory, agents: Sequence[DebaterAgent]) -> dict[str, StabilityScore]:
    out = {}
    for agent in agents:
        scores = [
            resp.stability
            for rec in history.rounds
            for resp in rec.responses
            if resp.agent.name == agent.name and resp.stability is not None
        ]
        if scores:
            out[agent.name] = aggregate(scores)
    return out


def run_debate(
    claim: Claim,
    agents: Sequence[DebaterAgent],
    judge_agent: JudgeAgent,
    config: DebateConfig | None = None,
) -> DebateOutcome:
    """Run rounds until consensus with a passing gate, else ask the judge.

    A backend that stays unavailable after its retries aborts the debate;
    the outcome then has termination ``ABORTED`` and the partial history.
    """
    config = config or DebateConfig()
    if len(agents) != 2:
        raise ProtocolError("exactly two debaters are required")
    if agents[0].name == agents[1].name:
        raise ProtocolError("debater names must be distinct")
    history = DebateHistory(claim)
    fields: dict[str, Any] = {}
    with track_calls() as calls:
        try:
            for _ in range(config.max_rounds):
                record = run_round(history, agents, config)
                if record.consensus and record.gate_passed:
                    fields = dict(
                        verdict=record.responses[0].verdict,
                        termination=Termination.CONSENSUS,
                        terminated_at_round=record.round,
                    )
                    break
            else:
                verdict, text = judge(
                    judge_agent, history, _aggregate_scores(history, agents), claim, config
                )
                fields = dict(
                    verdict=verdict,
                    termination=Termination.JUDGE,
                    terminated_at_round=config.max_rounds,
                    judge_text=text,
                )
        except BackendUnavailable as exc:
            logger.error("debate on claim %s aborted: %s", claim.id, exc)
            fields = dict(
                verdict=None,
                termination=Termination.ABORTED,
                terminated_at_round=len(history),
                error=f"{type(exc).__name__}: {exc}",
            )
    return DebateOutcome(
        history=history,
        aggregate_scores=_aggregate_scores(history, agents),
        backend_calls=dict(calls),
        **fields,
    )
