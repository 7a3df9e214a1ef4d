"""Benchmark harness: load claims, run debates in bulk, score exact match."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import random
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .backends import Backend, ConfigError
from .core import (
    AgentId,
    AgentKind,
    Claim,
    DebateOutcome,
    FileUnreadable,
    LabelSet,
    ToolDebateError,
    UnparsableVerdict,
    Verdict,
    exact_match,
    normalize_label,
)
from .debate import DebateConfig, DebaterAgent, JudgeAgent, run_debate, transcript
from .tools import RetrievalTool, VanillaTool

logger = logging.getLogger(__name__)

FORMATS = ("fever-jsonl", "generic-jsonl")

COMBOS: dict[str, tuple[AgentKind, AgentKind]] = {
    "rag+search": (AgentKind.RAG, AgentKind.SEARCH),
    "rag+rag": (AgentKind.RAG, AgentKind.RAG),
    "search+search": (AgentKind.SEARCH, AgentKind.SEARCH),
    "rag+vanilla": (AgentKind.RAG, AgentKind.VANILLA),
    "search+vanilla": (AgentKind.SEARCH, AgentKind.VANILLA),
    "vanilla+vanilla": (AgentKind.VANILLA, AgentKind.VANILLA),
}


class TooManyMalformed(ToolDebateError):
    pass


class SampleTooLarge(ToolDebateError):
    pass


class MissingGold(ToolDebateError):
    pass


class EmptyInput(ToolDebateError):
    pass


class UnknownCombo(ToolDebateError, ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    path: str
    format: str = "generic-jsonl"
    label_set: LabelSet = field(default_factory=LabelSet.default)
    sample_size: int = 200
    seed: int = 0
    max_malformed_frac: float = 0.01

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ConfigError(f"unknown dataset format {self.format!r}; expected one of {FORMATS}")
        if self.sample_size < 1:
            raise ConfigError("sample_size must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "path": str(self.path),
            "format": self.format,
            "sample_size": self.sample_size,
            "seed": self.seed,
        }


# --------------------------------------------------------------------------
# Loading and sampling
# --------------------------------------------------------------------------


def _parse_record(rec: Mapping[str, Any], spec: DatasetSpec) -> Claim:
    text = rec.get("claim")
    if text is None and spec.format == "generic-jsonl":
        text = rec.get("text")
    if not isinstance(text, str) or not text.strip():
        raise ValueError("missing claim text")
    if "id" not in rec:
        raise ValueError("missing id")
    label = rec.get("label")
    if not isinstance(label, str):
        raise ValueError("missing label")
    gold = normalize_label(label, spec.label_set)
    skip = {"id", "claim", "text", "label", "evidence"}
    meta = {"dataset": spec.name, **{k: v for k, v in rec.items() if k not in skip}}
    return Claim(id=str(rec["id"]), text=text.strip(), gold_label=gold, metadata=meta)


def read_dataset(spec: DatasetSpec) -> tuple[list[Claim], int]:
    """Parse the dataset file; return ``(claims, malformed_line_count)``."""
    claims: list[Claim] = []
    seen: set[str] = set()
    malformed = 0
    try:
        fh = open(spec.path)
    except OSError as exc:
        raise FileUnreadable(f"cannot read dataset {spec.path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                claim = _parse_record(json.loads(line), spec)
                if claim.id in seen:
                    raise ValueError(f"duplicate id {claim.id}")
            except (ValueError, TypeError, AttributeError, UnparsableVerdict) as exc:
                malformed += 1
                logger.warning("%s:%d: skipping malformed record (%s)", spec.path, lineno, exc)
                continue
            seen.add(claim.id)
            claims.append(claim)
    total = len(claims) + malformed
    if total == 0:
        raise FileUnreadable(f"{spec.path} contains no records")
    if not claims or malformed / total > spec.max_malformed_frac:
        raise TooManyMalformed(f"{malformed} of {total} records in {spec.path} are malformed")
    return claims, malformed


def load_dataset(spec: DatasetSpec) -> list[Claim]:
    claims, malformed = read_dataset(spec)
    if malformed:
        logger.warning("%s: skipped %d malformed records", spec.name, malformed)
    return claims


def sample(claims: Sequence[Claim], n: int, seed: int) -> list[Claim]:
    """Uniform sample without replacement, keeping the input order."""
    if n > len(claims):
        raise SampleTooLarge(f"cannot sample {n} from {len(claims)} claims")
    picked = sorted(random.Random(seed).sample(range(len(claims)), n))
    return [claims[i] for i in picked]


# --------------------------------------------------------------------------
# Scoring
# --------------------------------------------------------------------------


def is_correct(outcome: DebateOutcome | None, gold: Verdict, label_set: LabelSet | None = None) -> bool:
    if outcome is None or outcome.aborted or outcome.verdict is None:
        return False
    return exact_match(outcome.verdict, gold, label_set)


def evaluate(
    outcomes: Mapping[str, DebateOutcome | None],
    golds: Mapping[str, Verdict],
    label_set: LabelSet | None = None,
) -> float:
    """Exact-match accuracy over claim ids; aborted or missing outcomes are misses."""
    if not outcomes:
        raise MissingGold("no outcomes to evaluate")
    missing = [cid for cid in outcomes if golds.get(cid) is None]
    if missing:
        raise MissingGold(f"no gold label for {len(missing)} claims, e.g. {missing[0]!r}")
    hits = sum(is_correct(outcomes[cid], golds[cid], label_set) for cid in outcomes)
    return hits / len(outcomes)


def bootstrap_ci(
    correct_flags: Sequence[bool],
    resamples: int = 10_000,
    level: float = 0.95,
    seed: int = 0,
    decimals: int | None = 2,
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of ``correct_flags``.

    The interval is widened if needed so it always contains the sample
    mean, which rounding could otherwise break.
    """
    flags = np.asarray(correct_flags, dtype=float)
    if flags.size == 0:
        raise EmptyInput("bootstrap needs at least one observation")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    rng = np.random.default_rng(seed)
    means = np.empty(resamples)
    # chunked to keep the index matrix small for large inputs
    step = max(1, 2_000_000 // flags.size)
    for start in range(0, resamples, step):
        stop = min(resamples, start + step)
        idx = rng.integers(0, flags.size, size=(stop - start, flags.size))
        means[start:stop] = flags[idx].mean(axis=1)
    alpha = (1 - level) / 2
    lo, hi = np.quantile(means, [alpha, 1 - alpha])
    point = flags.mean()
    if decimals is not None:
        lo, hi, point = round(float(lo), decimals), round(float(hi), decimals), round(float(point), decimals)
    return float(min(lo, point)), float(max(hi, point))


# --------------------------------------------------------------------------
# Agent combinations
# --------------------------------------------------------------------------


def parse_combo(text: str) -> tuple[AgentKind, AgentKind]:
    key = text.strip().lower().replace(" ", "")
    if key in COMBOS:
        return COMBOS[key]
    a, _, b = key.partition("+")
    if f"{b}+{a}" in COMBOS:
        return COMBOS[f"{b}+{a}"][::-1]
    raise UnknownCombo(f"unknown agent combination {text!r}; choose from {sorted(COMBOS)}")


@dataclass
class ToolBox:
    """The tools available to a run; VANILLA is always available."""

    rag: RetrievalTool | None = None
    search: RetrievalTool | None = None
    vanilla: RetrievalTool = field(default_factory=VanillaTool)

    def get(self, kind: AgentKind) -> RetrievalTool:
        tool = {AgentKind.RAG: self.rag, AgentKind.SEARCH: self.search,
                AgentKind.VANILLA: self.vanilla}.get(kind)
        if tool is None:
            raise ConfigError(f"no {kind.value} tool configured")
        return tool


def build_agents(
    combo: tuple[AgentKind, AgentKind], tools: ToolBox, backend: Backend
) -> list[DebaterAgent]:
    a, b = combo
    names = [a.value, b.value] if a != b else [f"{a.value}-1", f"{b.value}-2"]
    return [
        DebaterAgent(AgentId(kind, name), tools.get(kind), backend)
        for kind, name in zip(combo, names)
    ]


# --------------------------------------------------------------------------
# Runs
# --------------------------------------------------------------------------


@dataclass
class RunReport:
    records: list[dict[str, Any]]
    accuracy: float
    ci: tuple[float, float]
    config: dict[str, Any]
    score_rows: list[dict[str, Any]]
    transcripts: dict[str, dict[str, Any]] = field(default_factory=dict, repr=False)
    timings: dict[str, float] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        lo, hi = self.ci
        if not lo <= round(self.accuracy, 2) <= hi:
            raise ValueError(f"interval {self.ci} does not contain accuracy {self.accuracy}")

    @property
    def n_aborted(self) -> int:
        return sum(1 for r in self.records if r["termination"] == "ABORTED")

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "ci": list(self.ci),
            "n_claims": len(self.records),
            "n_correct": sum(r["correct"] for r in self.records),
            "n_aborted": self.n_aborted,
            "config": self.config,
            "records": self.records,
            "score_distribution": {
                "faithfulness": [r["faithfulness"] for r in self.score_rows],
                "answer_relevance": [r["answer_relevance"] for r in self.score_rows],
            },
        }

    def scores_csv(self) -> str:
        buf = io.StringIO()
        cols = ["claim_id", "agent", "round", "faithfulness", "answer_relevance"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.score_rows:
            w.writerow({c: row[c] for c in cols})
        return buf.getvalue()

    def write(self, out_dir: str | os.PathLike) -> Path:
        """Write report.json, scores.csv, transcripts/ and timings.json."""
        out = Path(out_dir)
        tdir = out / "transcripts"
        tdir.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(_dumps(self.to_dict()))
        (out / "scores.csv").write_text(self.scores_csv())
        used: set[str] = set()
        for cid, doc in sorted(self.transcripts.items()):
            name = transcript_filename(cid, used)
            (tdir / name).write_text(_dumps(doc))
        # wall-clock lives apart from the reproducible artifacts
        (out / "timings.json").write_text(_dumps(self.timings))
        return out


def _dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def transcript_filename(claim_id: str, used: set[str] | None = None) -> str:
    base = re.sub(r"[^A-Za-z0-9._-]", "_", claim_id) or "claim"
    name, i = f"{base}.json", 1
    while used is not None and name in used:
        i += 1
        name = f"{base}~{i}.json"
    if used is not None:
        used.add(name)
    return name


def _score_rows(claim_id: str, outcome: DebateOutcome) -> list[dict[str, Any]]:
    return [
        {
            "claim_id": claim_id,
            "agent": resp.agent.name,
            "round": rec.round,
            "faithfulness": resp.stability.faithfulness,
            "answer_relevance": resp.stability.answer_relevance,
        }
        for rec in outcome.history.rounds
        for resp in rec.responses
        if resp.stability is not None
    ]


def run_claims(
    claims: Sequence[Claim],
    config: DebateConfig,
    agents: Sequence[DebaterAgent],
    judge_agent: JudgeAgent,
    *,
    parallelism: int = 4,
    bootstrap_resamples: int = 10_000,
    seed: int = 0,
    run_config: Mapping[str, Any] | None = None,
) -> RunReport:
    """Debate every claim and assemble the report.

    A claim whose debate raises is recorded as aborted and scored as a
    miss; the run carries on. Records are ordered by claim id whatever
    the completion order.
    """
    if not claims:
        raise EmptyInput("no claims to run")
    if any(c.gold_label is None for c in claims):
        raise MissingGold("every benchmark claim needs a gold label")
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1")

    def one(claim: Claim) -> tuple[Claim, DebateOutcome | None, str | None, float]:
        t0 = time.perf_counter()
        try:
            outcome = run_debate(claim, agents, judge_agent, config)
            return claim, outcome, outcome.error, time.perf_counter() - t0
        except Exception as exc:  # one bad claim must not sink the run
            logger.exception("claim %s failed", claim.id)
            return claim, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0

    if parallelism == 1:
        results = [one(c) for c in claims]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, claims))
    results.sort(key=lambda r: r[0].id)

    records, rows, transcripts, timings = [], [], {}, {}
    outcomes: dict[str, DebateOutcome | None] = {}
    for claim, outcome, error, elapsed in results:
        correct = is_correct(outcome, claim.gold_label, config.label_set)
        outcomes[claim.id] = outcome
        records.append(
            {
                "claim_id": claim.id,
                "gold": claim.gold_label.label,
                "predicted": outcome.verdict.label if outcome and outcome.verdict else None,
                "correct": correct,
                "termination": outcome.termination.value if outcome else "ABORTED",
                "rounds_used": len(outcome.history) if outcome else 0,
                "error": error,
            }
        )
        if outcome is not None:
            rows.extend(_score_rows(claim.id, outcome))
            transcripts[claim.id] = transcript(outcome, config)
        else:
            transcripts[claim.id] = {"claim": claim.to_dict(), "config": config.to_dict(), "error": error}
        timings[claim.id] = round(elapsed, 4)

    golds = {c.id: c.gold_label for c in claims}
    accuracy = evaluate(outcomes, golds, config.label_set)
    flags = [r["correct"] for r in records]
    ci = bootstrap_ci(flags, resamples=bootstrap_resamples, seed=seed)
    snapshot = dict(run_config) if run_config is not None else {"debate": config.to_dict()}
    return RunReport(
        records=records,
        accuracy=accuracy,
        ci=ci,
        config=snapshot,
        score_rows=rows,
        transcripts=transcripts,
        timings=timings,
    )


def run_benchmark(
    spec: DatasetSpec,
    config: DebateConfig,
    combo: str | tuple[AgentKind, AgentKind],
    backend: Backend,
    tools: ToolBox,
    *,
    judge_backend: Backend | None = None,
    parallelism: int = 4,
    bootstrap_resamples: int = 10_000,
    run_config: Mapping[str, Any] | None = None,
) -> RunReport:
    """Load and sample ``spec``, then debate each claim with ``combo``."""
    kinds = parse_combo(combo) if isinstance(combo, str) else tuple(combo)
    agents = build_agents(kinds, tools, backend)  # config errors surface before any call
    judge_agent = JudgeAgent(judge_backend or backend)
    claims = load_dataset(spec)
    chosen = sample(claims, min(spec.sample_size, len(claims)), spec.seed)
    if spec.sample_size > len(claims):
        logger.warning("%s has only %d claims; using all of them", spec.name, len(claims))
    return run_claims(
        chosen,
        config,
        agents,
        judge_agent,
        parallelism=parallelism,
        bootstrap_resamples=bootstrap_resamples,
        seed=spec.seed,
        run_config=run_config,
    )
