"""Layered run configuration and the factories that turn it into live objects.

Precedence, lowest first: built-in defaults, config file, environment,
command-line flags. Credentials are read from the environment only and
never appear in the resolved config.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any, Mapping

import yaml

from .backends import Backend, CallLog, ConfigError, OpenAICompatBackend, ScriptedBackend
from .core import AgentKind, LabelSet
from .debate import DebateConfig
from .harness import DatasetSpec, ToolBox, parse_combo
from .prompts import PromptSet
from .stability import StabilityThresholds
from .tools import FixtureSearchClient, RagTool, SearchTool, TavilySearchClient, VectorIndex, ingest_corpus

DEFAULTS: dict[str, dict[str, Any]] = {
    "backends": {
        "kind": "openai-compat",
        "script": None,
        "base_url": "https://api.openai.com/v1",
        "model": "gpt-4o-mini",
        "embedding_model": "text-embedding-3-small",
        "embedding_dim": 1536,
        "max_attempts": 3,
        "max_in_flight": 8,
        "timeout": 60.0,
    },
    "tools": {
        "index": None,
        "search_fixtures": None,
        "search_base_url": "https://api.tavily.com",
        "k": 3,
        "max_doc_chars": 2000,
        "chunk_chars": 1000,
        "overlap_chars": 200,
    },
    "debate": {
        "rounds": 3,
        "faithfulness_min": 0.7,
        "relevance_min": 0.8,
        "strict_thresholds": False,
        "query_formulation": True,
        "scoring_feedback": True,
        "query_uses_previous_query": True,
        "n_questions": 3,
        "parallel_agents": False,
        "labels": None,
        "templates_dir": None,
    },
    "benchmark": {
        "dataset": None,
        "name": None,
        "format": "generic-jsonl",
        "sample_size": 200,
        "seed": 0,
        "combo": "rag+search",
        "parallelism": 4,
        "bootstrap_resamples": 10000,
    },
    "output": {"out_dir": "runs/latest"},
}

BACKEND_KINDS = ("openai-compat", "mock")


def read_config_file(path: str | os.PathLike) -> dict[str, Any]:
    """Read a JSON or YAML config.

    A JSON report written by a previous run is accepted too: its embedded
    ``config`` block is used.
    """
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from exc
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {p} must be a mapping")
    if "config" in data and "records" in data:
        data = data["config"]
    return data


def merge(base: Mapping[str, Any], *layers: Mapping[str, Any] | None) -> dict[str, Any]:
    out = copy.deepcopy(dict(base))
    for layer in layers:
        for section, values in (layer or {}).items():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(values, Mapping):
                raise ConfigError(f"config section {section!r} must be a mapping")
            unknown = set(values) - set(DEFAULTS[section])
            if unknown:
                raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
            out[section].update({k: v for k, v in values.items() if v is not None})
    return out


def env_layer(env: Mapping[str, str]) -> dict[str, Any]:
    b = {}
    if env.get("LLM_API_BASE"):
        b["base_url"] = env["LLM_API_BASE"]
    if env.get("LLM_MODEL"):
        b["model"] = env["LLM_MODEL"]
    return {"backends": b} if b else {}


def resolve(
    file_layer: Mapping[str, Any] | None = None,
    flag_layer: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
) -> dict[str, Any]:
    env = os.environ if env is None else env
    cfg = merge(DEFAULTS, file_layer, env_layer(env), flag_layer)
    if cfg["backends"]["kind"] not in BACKEND_KINDS:
        raise ConfigError(f"backend must be one of {BACKEND_KINDS}")
    parse_combo(cfg["benchmark"]["combo"])
    return cfg


# --------------------------------------------------------------------------
# Factories
# --------------------------------------------------------------------------


def make_backend(cfg: Mapping[str, Any], env: Mapping[str, str] | None = None,
                 call_log: CallLog | None = None) -> Backend:
    env = os.environ if env is None else env
    b = cfg["backends"]
    if b["kind"] == "mock":
        if not b["script"]:
            return ScriptedBackend(call_log=call_log)
        try:
            return ScriptedBackend.from_file(b["script"], call_log=call_log)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load script {b['script']}: {exc}") from exc
    key = env.get("LLM_API_KEY")
    if not key:
        raise ConfigError("LLM_API_KEY must be set for the openai-compat backend")
    return OpenAICompatBackend(
        base_url=b["base_url"],
        api_key=key,
        model=b["model"],
        embedding_model=b["embedding_model"],
        dim=b["embedding_dim"],
        max_attempts=b["max_attempts"],
        max_in_flight=b["max_in_flight"],
        timeout=b["timeout"],
        call_log=call_log,
    )


def make_debate_config(cfg: Mapping[str, Any]) -> DebateConfig:
    d = cfg["debate"]
    try:
        return DebateConfig(
            max_rounds=d["rounds"],
            k=cfg["tools"]["k"],
            thresholds=StabilityThresholds(d["faithfulness_min"], d["relevance_min"], d["strict_thresholds"]),
            scoring_feedback=d["scoring_feedback"],
            query_formulation=d["query_formulation"],
            query_uses_previous_query=d["query_uses_previous_query"],
            n_questions=d["n_questions"],
            parallel_agents=d["parallel_agents"],
            label_set=LabelSet.from_config(d["labels"]),
            prompts=PromptSet.from_dir(d["templates_dir"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def make_tools(
    cfg: Mapping[str, Any],
    backend: Backend,
    kinds: tuple[AgentKind, ...],
    env: Mapping[str, str] | None = None,
) -> ToolBox:
    """Build only the tools ``kinds`` needs, so unused ones need no setup."""
    env = os.environ if env is None else env
    t = cfg["tools"]
    extras = getattr(backend, "extras", {})
    box = ToolBox()
    if AgentKind.RAG in kinds:
        if t["index"]:
            index = VectorIndex.load(t["index"])
        elif extras.get("corpus"):
            docs = [(str(d["id"]), d["text"]) for d in extras["corpus"]]
            index = ingest_corpus(docs, backend, t["chunk_chars"], t["overlap_chars"])
        else:
            raise ConfigError("the RAG tool needs tools.index (or a corpus section in the mock script)")
        box.rag = RagTool(index, backend, k=t["k"])
    if AgentKind.SEARCH in kinds:
        if t["search_fixtures"] or "search" in extras:
            client = FixtureSearchClient(t["search_fixtures"], results=extras.get("search"))
        elif cfg["backends"]["kind"] == "mock":
            client = FixtureSearchClient()
        else:
            client = TavilySearchClient(env.get("SEARCH_API_KEY", ""), t["search_base_url"])
        box.search = SearchTool(client, k=t["k"], max_doc_chars=t["max_doc_chars"])
    return box


def make_dataset_spec(cfg: Mapping[str, Any], label_set: LabelSet) -> DatasetSpec:
    bm = cfg["benchmark"]
    if not bm["dataset"]:
        raise ConfigError("benchmark.dataset (--dataset) is required")
    return DatasetSpec(
        name=bm["name"] or Path(bm["dataset"]).stem,
        path=bm["dataset"],
        format=bm["format"],
        label_set=label_set,
        sample_size=bm["sample_size"],
        seed=bm["seed"],
    )
