"""Script builders shared by the test modules."""

from __future__ import annotations

from typing import Mapping

from tooldebate.backends import ScriptedBackend
from tooldebate.core import AgentId, AgentKind
from tooldebate.debate import DebaterAgent, JudgeAgent
from tooldebate.tools import VanillaTool

PARIS = "Paris is in France"


def paris_script() -> dict:
    """Both debaters agree in round 1 with perfect scores."""
    return {
        "chat": [
            {"tag": "query-formulation", "response": "Paris France capital"},
            {
                "tag": "respond",
                "response": "VERDICT: SUPPORTS\nRATIONALE: Paris is the capital of France.",
            },
            {"tag": "decompose", "response": "Paris is the capital of France.\nParis is in France."},
            {"tag": "verify", "response": "yes"},
            {"tag": "gen-questions", "response": "Is Paris in France?\nIs Paris in France?"},
            {"tag": "judge", "response": "VERDICT: SUPPORTS\nRATIONALE: both agree"},
        ],
        "embeddings": {
            PARIS: [1.0, 0.0, 0.0, 0.0],
            "Is Paris in France?": [1.0, 0.0, 0.0, 0.0],
        },
        "corpus": [
            {"id": "paris", "text": "Paris is the capital and most populous city of France."},
            {"id": "berlin", "text": "Berlin is the capital of Germany."},
        ],
        "search": {
            "Paris France capital": [
                {"url": "https://example.org/paris", "content": "Paris is the capital of France.", "score": 0.93},
            ],
        },
    }


def scenario_script(claim: str, plan: Mapping[tuple[int, str], tuple[str, int, bool]],
                    judge_label: str = "REFUTES") -> dict:
    """Script where each (round, agent) has a chosen label and scores.

    ``plan[(r, name)] = (label, n_supported_of_10, relevant)``. Faithfulness
    is ``n_supported / 10``; answer relevance is 1 if ``relevant`` else 0.
    """
    rules = [{"tag": "query-formulation", "response": f"query about {claim}"}]
    good = [1.0, 0.0]
    bad = [0.0, 1.0]
    for (r, name), (label, n_sup, relevant) in sorted(plan.items()):
        token = f"tok-{name}-r{r}"
        rules.append({"tag": "respond", "round": r, "agent": name,
                      "response": f"VERDICT: {label}\nRATIONALE: {token}"})
        statements = [f"{token} statement {i}" for i in range(10)]
        rules.append({"tag": "decompose", "round": r, "agent": name, "response": "\n".join(statements)})
        for i, s in enumerate(statements):
            rules.append({"tag": "verify", "round": r, "agent": name, "contains": s,
                          "response": "yes" if i < n_sup else "no"})
        q = "good question" if relevant else "bad question"
        rules.append({"tag": "gen-questions", "round": r, "agent": name, "response": f"{q}\n{q}\n{q}"})
    rules.append({"tag": "judge", "response": f"VERDICT: {judge_label}"})
    return {"chat": rules, "embeddings": {claim: good, "good question": good, "bad question": bad}}


def vanilla_pair(backend) -> tuple[list[DebaterAgent], JudgeAgent]:
    agents = [
        DebaterAgent(AgentId(AgentKind.VANILLA, "A"), VanillaTool(), backend),
        DebaterAgent(AgentId(AgentKind.VANILLA, "B"), VanillaTool(), backend),
    ]
    return agents, JudgeAgent(backend)


def bench_fixture(n: int = 10) -> tuple[list[dict], dict]:
    """A small labelled dataset and a script that covers every claim.

    Even claims reach consensus in round 1; odd claims disagree and go to
    the judge, who answers REFUTES. Every third claim's gold label is
    NOT_ENOUGH_INFO so accuracy is strictly between 0 and 1.
    """
    records, rules, emb = [], [{"tag": "query-formulation", "response": "lookup"}], {}
    for i in range(n):
        claim = f"Claim number {i} about topic {chr(65 + i % 26)}"
        gold = "NOT ENOUGH INFO" if i % 3 == 0 else ("SUPPORTS" if i % 2 == 0 else "REFUTES")
        records.append({"id": f"c{i:02d}", "claim": claim, "label": gold})
        token = f"tok{i:02d}"
        for agent, label in (("RAG", "SUPPORTS"), ("SEARCH", "SUPPORTS" if i % 2 == 0 else "REFUTES")):
            rules.append({"tag": "respond", "agent": agent, "contains": claim,
                          "response": f"VERDICT: {label}\nRATIONALE: {token} {agent}"})
        rules.append({"tag": "respond", "contains": claim,
                      "response": f"VERDICT: SUPPORTS\nRATIONALE: {token} other"})
        rules.append({"tag": "decompose", "contains": token, "response": f"{token} fact one\n{token} fact two"})
        rules.append({"tag": "gen-questions", "contains": token, "response": f"question {token}"})
        emb[claim] = [1.0, 0.0, 0.0]
        emb[f"question {token}"] = [1.0, 0.0, 0.0]
    rules += [
        {"tag": "verify", "response": "yes"},
        {"tag": "judge", "response": "VERDICT: REFUTES\nRATIONALE: judged"},
    ]
    corpus = [{"id": f"d{i}", "text": f"Document {i} discussing topic {chr(65 + i)}."} for i in range(5)]
    script = {"chat": rules, "embeddings": emb, "corpus": corpus,
              "search": {"lookup": [{"url": "https://example.org/a", "content": "Some page.", "score": 0.5}]}}
    return records, script


def scripted(data: dict) -> ScriptedBackend:
    return ScriptedBackend.from_dict(data)
