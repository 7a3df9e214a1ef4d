"""Command-line entry point: ``tooldebate {verify,ingest,bench,inspect}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from . import config as cfgmod
from .backends import CallLog, ConfigError
from .core import Claim, FileUnreadable, ToolDebateError
from .debate import JudgeAgent, run_debate, transcript
from .harness import UnknownCombo, build_agents, parse_combo, run_benchmark
from .tools import EmptyCorpus, ingest_corpus, read_corpus

log = logging.getLogger("tooldebate")

EXIT_OK, EXIT_ABORTED, EXIT_CONFIG = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="JSON/YAML config file, or a previous report.json")
    g.add_argument("--backend", choices=cfgmod.BACKEND_KINDS)
    g.add_argument("--script", help="mock backend script (JSON)")
    g.add_argument("--index", help="vector index file for the RAG tool")
    g.add_argument("--search-fixtures", help="directory of canned search results")
    g.add_argument("--combo", help="agent pairing, e.g. rag+search")
    g.add_argument("--rounds", type=int)
    g.add_argument("--faithfulness-min", type=float)
    g.add_argument("--relevance-min", type=float)
    g.add_argument("--strict-thresholds", action="store_true", default=None)
    g.add_argument("--no-query-formulation", action="store_true")
    g.add_argument("--no-scoring-feedback", action="store_true")
    g.add_argument("--templates-dir")
    g.add_argument("--out-dir")
    g.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tooldebate", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="debate a single claim")
    p.add_argument("claim")
    _common(p)

    p = sub.add_parser("ingest", help="chunk and embed a JSONL corpus into an index file")
    p.add_argument("corpus")
    p.add_argument("index_path")
    p.add_argument("--chunk-chars", type=int)
    p.add_argument("--overlap-chars", type=int)
    _common(p)

    p = sub.add_parser("bench", help="run a benchmark over a dataset")
    p.add_argument("--dataset")
    p.add_argument("--dataset-format", choices=("fever-jsonl", "generic-jsonl"))
    p.add_argument("--sample-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--parallelism", type=int)
    _common(p)

    p = sub.add_parser("inspect", help="pretty-print a transcript")
    p.add_argument("transcript")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def flag_layer(args: argparse.Namespace) -> dict[str, Any]:
    a = vars(args)
    layer = {
        "backends": {"kind": a.get("backend"), "script": a.get("script")},
        "tools": {
            "index": a.get("index"),
            "search_fixtures": a.get("search_fixtures"),
            "chunk_chars": a.get("chunk_chars"),
            "overlap_chars": a.get("overlap_chars"),
        },
        "debate": {
            "rounds": a.get("rounds"),
            "faithfulness_min": a.get("faithfulness_min"),
            "relevance_min": a.get("relevance_min"),
            "strict_thresholds": a.get("strict_thresholds"),
            "templates_dir": a.get("templates_dir"),
            "query_formulation": False if a.get("no_query_formulation") else None,
            "scoring_feedback": False if a.get("no_scoring_feedback") else None,
        },
        "benchmark": {
            "dataset": a.get("dataset"),
            "format": a.get("dataset_format"),
            "sample_size": a.get("sample_size"),
            "seed": a.get("seed"),
            "combo": a.get("combo"),
            "parallelism": a.get("parallelism"),
        },
        "output": {"out_dir": a.get("out_dir")},
    }
    return layer


def _resolve(args: argparse.Namespace) -> dict[str, Any]:
    file_layer = cfgmod.read_config_file(args.config) if args.config else None
    return cfgmod.resolve(file_layer, flag_layer(args))


def _snapshot(cfg: dict[str, Any]) -> dict[str, Any]:
    # where artifacts land is not part of what they contain
    return {k: v for k, v in cfg.items() if k != "output"}


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.3f}"


def _score_table(doc: dict[str, Any]) -> str:
    lines = [f"{'round':>5}  {'agent':<12} {'verdict':<16} {'F':>6} {'AR':>6}  gate"]
    for rec in doc["rounds"]:
        for resp in rec["responses"]:
            st = resp["stability"] or {}
            lines.append(
                f"{rec['round']:>5}  {resp['agent']:<12} {resp['verdict']:<16} "
                f"{_fmt(st.get('faithfulness')):>6} {_fmt(st.get('answer_relevance')):>6}  "
                f"{'pass' if rec['gate_passed'] else 'fail'}"
            )
    return "\n".join(lines)


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    out = Path(cfg["output"]["out_dir"])
    debate_cfg = cfgmod.make_debate_config(cfg)
    kinds = parse_combo(cfg["benchmark"]["combo"])
    backend = cfgmod.make_backend(cfg, call_log=CallLog(out / "calls.jsonl"))
    tools = cfgmod.make_tools(cfg, backend, kinds)
    agents = build_agents(kinds, tools, backend)
    claim = Claim(id="cli", text=args.claim)

    outcome = run_debate(claim, agents, JudgeAgent(backend), debate_cfg)
    doc = transcript(outcome, debate_cfg)
    doc["resolved_config"] = _snapshot(cfg)
    _write_json(out / "transcript.json", doc)

    if outcome.aborted:
        print(f"ABORTED after {outcome.terminated_at_round} round(s): {outcome.error}")
    else:
        print(f"verdict:     {outcome.verdict.label}")
        print(f"termination: {outcome.termination.value} (round {outcome.terminated_at_round})")
    print(_score_table(doc))
    print(f"transcript:  {out / 'transcript.json'}")
    return EXIT_ABORTED if outcome.aborted else EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    t = cfg["tools"]
    backend = cfgmod.make_backend(cfg)
    docs = read_corpus(args.corpus)
    index = ingest_corpus(docs, backend, t["chunk_chars"], t["overlap_chars"])
    Path(args.index_path).parent.mkdir(parents=True, exist_ok=True)
    index.save(args.index_path)
    print(f"indexed {len(index)} chunks from {len(docs)} documents (dim {index.dim}) -> {args.index_path}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    out = Path(cfg["output"]["out_dir"])
    debate_cfg = cfgmod.make_debate_config(cfg)
    bm = cfg["benchmark"]
    kinds = parse_combo(bm["combo"])
    spec = cfgmod.make_dataset_spec(cfg, debate_cfg.label_set)
    backend = cfgmod.make_backend(cfg, call_log=CallLog(out / "calls.jsonl"))
    tools = cfgmod.make_tools(cfg, backend, kinds)

    t0 = time.perf_counter()
    report = run_benchmark(
        spec,
        debate_cfg,
        kinds,
        backend,
        tools,
        parallelism=bm["parallelism"],
        bootstrap_resamples=bm["bootstrap_resamples"],
        run_config=_snapshot(cfg),
    )
    report.write(out)
    lo, hi = report.ci
    print(f"{spec.name} [{bm['combo']}]: EM {report.accuracy:.3f}  95% CI ({lo:.2f}, {hi:.2f})  "
          f"n={len(report.records)} aborted={report.n_aborted}  {time.perf_counter() - t0:.1f}s")
    print(f"report:      {out / 'report.json'}")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    try:
        doc = json.loads(Path(args.transcript).read_text())
    except (OSError, ValueError) as exc:
        raise FileUnreadable(f"cannot read transcript {args.transcript}: {exc}") from exc
    claim = doc["claim"]
    print(f"claim [{claim['id']}]: {claim['text']}")
    if claim.get("gold_label"):
        print(f"gold: {claim['gold_label']}")
    if "rounds" not in doc:
        print(f"failed: {doc.get('error')}")
        return EXIT_OK
    for rec in doc["rounds"]:
        print(f"\n=== round {rec['round']}  consensus={rec['consensus']}  gate={rec['gate_passed']}"
              + (f"  flags={','.join(rec['flags'])}" if rec["flags"] else ""))
        for resp in rec["responses"]:
            st = resp["stability"] or {}
            print(f"\n[{resp['agent']}] query: {resp['query']}")
            for d in resp["documents"]:
                print(f"    - {d['source_id']}: {d['text'][:100]}")
            print(f"  verdict {resp['verdict']}  F={_fmt(st.get('faithfulness'))}  "
                  f"AR={_fmt(st.get('answer_relevance'))}")
            print("  " + resp["rationale"].replace("\n", "\n  "))
    o = doc["outcome"]
    print(f"\noutcome: {o['verdict']} via {o['termination']} at round {o['terminated_at_round']}")
    if o.get("judge_text"):
        print("judge: " + o["judge_text"].strip().replace("\n", "\n       "))
    calls = doc.get("backend_calls") or {}
    if calls:
        print("backend calls: " + ", ".join(f"{k}={v}" for k, v in calls.items()))
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "ingest": cmd_ingest, "bench": cmd_bench, "inspect": cmd_inspect}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UnknownCombo as exc:
        parser.error(str(exc))
    except (ConfigError, FileUnreadable, EmptyCorpus) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ToolDebateError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORTED


if __name__ == "__main__":
    sys.exit(main())
