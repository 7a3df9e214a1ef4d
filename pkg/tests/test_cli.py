import json
from pathlib import Path

import pytest

from tooldebate import config as cfgmod
from tooldebate.backends import ConfigError
from tooldebate.cli import main
from tooldebate.tools import VectorIndex

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
AGREE = str(FIXTURES / "agree.json")
BENCH_SCRIPT = str(FIXTURES / "bench_script.json")
BENCH_DATA = str(FIXTURES / "bench10.jsonl")


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for var in ("LLM_API_KEY", "LLM_API_BASE", "LLM_MODEL", "SEARCH_API_KEY"):
        monkeypatch.delenv(var, raising=False)


def test_verify_mock(tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["verify", "Paris is in France", "--backend", "mock", "--script", AGREE, "--out-dir", str(out)])
    text = capsys.readouterr().out
    assert rc == 0
    assert "verdict:     SUPPORTS" in text and "CONSENSUS (round 1)" in text
    doc = json.loads((out / "transcript.json").read_text())
    assert doc["outcome"]["verdict"] == "SUPPORTS" and doc["outcome"]["terminated_at_round"] == 1
    assert doc["resolved_config"]["backends"]["kind"] == "mock"
    calls = [json.loads(x) for x in (out / "calls.jsonl").read_text().splitlines()]
    assert calls and all("latency_ms" in c for c in calls)


def test_verify_missing_key_exits_2(tmp_path, capsys):
    rc = main(["verify", "x", "--combo", "vanilla+vanilla", "--out-dir", str(tmp_path)])
    assert rc == 2 and "LLM_API_KEY" in capsys.readouterr().err
    assert not (tmp_path / "calls.jsonl").exists() or (tmp_path / "calls.jsonl").read_text() == ""


def test_verify_no_query_formulation(tmp_path):
    out = tmp_path / "run"
    main(["verify", "Paris is in France", "--backend", "mock", "--script", AGREE,
          "--no-query-formulation", "--out-dir", str(out)])
    doc = json.loads((out / "transcript.json").read_text())
    queries = [r["query"] for rec in doc["rounds"] for r in rec["responses"]]
    assert queries and set(queries) == {"Paris is in France"}


def test_verify_flags_reach_config(tmp_path):
    out = tmp_path / "run"
    main(["verify", "Paris is in France", "--backend", "mock", "--script", AGREE, "--rounds", "2",
          "--faithfulness-min", "0.9", "--relevance-min", "0.85", "--no-scoring-feedback", "--out-dir", str(out)])
    cfg = json.loads((out / "transcript.json").read_text())["config"]
    assert (cfg["max_rounds"], cfg["faithfulness_min"], cfg["relevance_min"]) == (2, 0.9, 0.85)
    assert cfg["scoring_feedback"] is False


def test_ingest(tmp_path, capsys):
    idx = tmp_path / "index.json"
    args = ["ingest", str(FIXTURES / "corpus.jsonl"), str(idx), "--backend", "mock",
            "--chunk-chars", "50", "--overlap-chars", "10"]
    assert main(args) == 0
    # windows of 50 stepping by 40: 110 chars -> 3 starts, 33 -> 1, 79 -> 2
    assert len(VectorIndex.load(idx)) == 6
    assert "indexed 6 chunks from 3 documents" in capsys.readouterr().out
    first = idx.read_bytes()
    main(args)
    assert idx.read_bytes() == first


def test_ingest_empty_corpus(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["ingest", str(empty), str(tmp_path / "i.json"), "--backend", "mock"]) == 2
    assert main(["ingest", str(tmp_path / "nope.jsonl"), str(tmp_path / "i.json"), "--backend", "mock"]) == 2


def test_verify_with_index_file(tmp_path, capsys):
    idx = tmp_path / "index.json"
    main(["ingest", str(FIXTURES / "corpus.jsonl"), str(idx), "--backend", "mock", "--script", AGREE])
    out = tmp_path / "run"
    main(["verify", "Paris is in France", "--backend", "mock", "--script", AGREE, "--index", str(idx),
          "--combo", "rag+rag", "--out-dir", str(out)])
    doc = json.loads((out / "transcript.json").read_text())
    ids = {c.chunk_id for c in VectorIndex.load(idx).chunks}
    got = [d["source_id"] for d in doc["rounds"][0]["responses"][0]["documents"]]
    assert len(got) == 3 and set(got) <= ids


def _bench(out, *extra):
    return main(["bench", "--backend", "mock", "--script", BENCH_SCRIPT, "--dataset", BENCH_DATA,
                 "--sample-size", "10", "--out-dir", str(out), *extra])


def test_bench_end_to_end(tmp_path, capsys):
    assert _bench(tmp_path / "a") == 0
    text = capsys.readouterr().out
    assert "EM 0.600" in text and "[rag+search]" in text
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["n_claims"] == 10 and report["config"]["benchmark"]["combo"] == "rag+search"
    assert len(list((tmp_path / "a" / "transcripts").glob("*.json"))) == 10
    header = (tmp_path / "a" / "scores.csv").read_text().splitlines()[0]
    assert header == "claim_id,agent,round,faithfulness,answer_relevance"


def test_bench_rerun_from_embedded_config(tmp_path):
    _bench(tmp_path / "a")
    assert main(["bench", "--config", str(tmp_path / "a" / "report.json"), "--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_bench_unknown_combo_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        _bench(tmp_path, "--combo", "rag+oracle")
    assert exc.value.code == 2 and "unknown agent combination" in capsys.readouterr().err


def test_bench_requires_dataset(tmp_path):
    assert main(["bench", "--backend", "mock", "--out-dir", str(tmp_path)]) == 2


def test_inspect(tmp_path, capsys):
    out = tmp_path / "run"
    main(["verify", "Paris is in France", "--backend", "mock", "--script", AGREE, "--out-dir", str(out)])
    capsys.readouterr()
    assert main(["inspect", str(out / "transcript.json")]) == 0
    text = capsys.readouterr().out
    assert "=== round 1" in text and "outcome: SUPPORTS via CONSENSUS" in text
    assert main(["inspect", str(tmp_path / "missing.json")]) == 2


def test_config_layering(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("backends:\n  model: from-file\n  base_url: http://file/v1\ndebate:\n  rounds: 5\n")
    cfg = cfgmod.resolve(cfgmod.read_config_file(f), {"debate": {"rounds": 2}}, env={"LLM_MODEL": "from-env"})
    assert cfg["backends"]["model"] == "from-env"
    assert cfg["backends"]["base_url"] == "http://file/v1"
    assert cfg["debate"]["rounds"] == 2
    with pytest.raises(ConfigError):
        cfgmod.resolve({"debate": {"roundz": 2}}, env={})
    with pytest.raises(ConfigError):
        cfgmod.make_backend(cfgmod.resolve(env={}), env={})
