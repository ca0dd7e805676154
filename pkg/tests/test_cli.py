"""End-to-end CLI walkthrough on a small scripted world, plus exit codes."""

import json
import math
from pathlib import Path

import pytest
from click.testing import CliRunner

from vecqa.cli import main

REPLY = {
    "text": "(a) paris, (b) rome",
    "tokens": [
        {"token": "(a) paris",
         "logprobs": {"(a) paris": math.log(0.5), "(a) kyiv": math.log(0.5)}},
        {"token": ", (b) rome", "logprobs": {", (b) rome": 0.0}},
    ],
}

PASSAGES = [
    {"id": "p1", "title": "Fair", "text": "the big fair is in paris"},
    {"id": "p2", "title": "Gear", "text": "a fair needs tents and lights"},
    {"id": "p3", "title": "Past", "text": "paris hosted the fair once before"},
    {"id": "p4", "title": "Rome", "text": "the fair of rome was small"},
]


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    """Raw corpus, script file, and built indexes under one directory."""
    base = tmp_path_factory.mktemp("cliworld")
    raw = base / "raw.jsonl"
    raw.write_text("".join(json.dumps(p) + "\n" for p in PASSAGES))

    script = base / "script.json"
    script.write_text(json.dumps({
        "dim": 16,
        "hidden_dim": 16,
        "entries": [{"match": {"contains": "Question: where is the big fair"},
                     "reply": REPLY}],
        "default": {"text": "(a) unknown, (b) unsure"},
    }))

    questions = base / "questions.jsonl"
    questions.write_text(json.dumps(
        {"qid": "q0", "question": "where is the big fair"}) + "\n")

    golds = base / "golds.jsonl"
    golds.write_text(json.dumps({"qid": "q0", "golds": ["rome"]}) + "\n")

    idx = base / "idx"
    runner = CliRunner()
    backend = f"script:{script}"
    steps = [
        ["ingest", "--corpus", str(raw), "--out", str(idx / "corpus.jsonl")],
        ["index", "lexical", "--corpus", str(idx / "corpus.jsonl"),
         "--out", str(idx / "lexical.idx")],
        ["index", "dense", "--corpus", str(idx / "corpus.jsonl"),
         "--backend", backend, "--out", str(idx / "dense.vec")],
    ]
    for args in steps:
        result = runner.invoke(main, args)
        assert result.exit_code == 0, result.output
    return {"base": base, "idx": idx, "backend": backend,
            "questions": questions, "golds": golds, "raw": raw}


ANSWER_COMMON = ["--m", "4", "--n", "4", "--threshold", "inf", "--epochs", "3"]


def invoke(args):
    return CliRunner().invoke(main, args)


class TestWalkthrough:
    def test_ingest_reports_count(self, world):
        result = invoke(["ingest", "--corpus", str(world["raw"]),
                         "--out", str(world["base"] / "again.jsonl")])
        assert result.exit_code == 0
        assert "ingested 4 passages" in result.output

    def test_answer_embqa(self, world):
        report = world["base"] / "embqa.jsonl"
        result = invoke(["answer", "--questions", str(world["questions"]),
                         "--indexes", str(world["idx"]),
                         "--backend", world["backend"],
                         "--report", str(report), *ANSWER_COMMON])
        assert result.exit_code == 0, result.output
        assert "answered 1 questions in mode embqa" in result.output
        (record,) = [json.loads(l) for l in report.read_text().splitlines()]
        assert record["qid"] == "q0"
        assert record["final_answer"] == "rome"
        assert record["usage"]["generate_calls"] == 2
        assert record["gate"] is not None
        assert record["context_reranked"] is not None

    def test_answer_retrieval_only(self, world):
        report = world["base"] / "ro.jsonl"
        result = invoke(["answer", "--questions", str(world["questions"]),
                         "--indexes", str(world["idx"]),
                         "--backend", world["backend"],
                         "--mode", "retrieval-only",
                         "--report", str(report), *ANSWER_COMMON])
        assert result.exit_code == 0, result.output
        (record,) = [json.loads(l) for l in report.read_text().splitlines()]
        assert record["usage"]["generate_calls"] == 1
        assert record["gate"] is None

    def test_answer_inline_question(self, world):
        report = world["base"] / "inline.jsonl"
        result = invoke(["answer", "--question", "where is the big fair",
                         "--indexes", str(world["idx"]),
                         "--backend", world["backend"],
                         "--mode", "retrieval-only",
                         "--report", str(report), *ANSWER_COMMON])
        assert result.exit_code == 0, result.output
        (record,) = [json.loads(l) for l in report.read_text().splitlines()]
        assert record["qid"] == "q0"
        assert record["final_answer"] == "rome"

    def test_reports_are_sorted_json(self, world):
        report = world["base"] / "sorted.jsonl"
        invoke(["answer", "--questions", str(world["questions"]),
                "--indexes", str(world["idx"]), "--backend", world["backend"],
                "--report", str(report), *ANSWER_COMMON])
        line = report.read_text().splitlines()[0]
        parsed = json.loads(line)
        assert line == json.dumps(parsed, sort_keys=True)

    def test_eval(self, world):
        report = world["base"] / "for_eval.jsonl"
        invoke(["answer", "--questions", str(world["questions"]),
                "--indexes", str(world["idx"]), "--backend", world["backend"],
                "--report", str(report), *ANSWER_COMMON])
        out = world["base"] / "scores.jsonl"
        result = invoke(["eval", "--report", str(report),
                         "--golds", str(world["golds"]),
                         "--out", str(out),
                         "--corpus", str(world["idx"] / "corpus.jsonl"),
                         "--at-k", "4"])
        assert result.exit_code == 0, result.output
        assert "exact match: 1.0000" in result.output
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert rows[0]["qid"] == "q0"
        assert rows[0]["em"] == 1.0
        assert rows[0]["gt_initial"] is not None
        assert "aggregate" in rows[-1]

    def test_cost_report(self, world):
        r1 = world["base"] / "cost_embqa.jsonl"
        r2 = world["base"] / "cost_ro.jsonl"
        invoke(["answer", "--questions", str(world["questions"]),
                "--indexes", str(world["idx"]), "--backend", world["backend"],
                "--report", str(r1), *ANSWER_COMMON])
        invoke(["answer", "--questions", str(world["questions"]),
                "--indexes", str(world["idx"]), "--backend", world["backend"],
                "--mode", "retrieval-only", "--report", str(r2),
                *ANSWER_COMMON])
        result = invoke(["cost-report", "--report", str(r1),
                         "--report", str(r2)])
        assert result.exit_code == 0, result.output
        assert "SuRe (analytic)" in result.output
        assert "7.00" in result.output
        assert "embqa" in result.output
        assert "retrieval-only" in result.output

    def test_rerank_learned(self, world):
        result = invoke(["rerank", "--indexes", str(world["idx"]),
                         "--kb", "p1,p2,p3,p4",
                         "--query", "where is the big fair",
                         "--candidates", "paris,rome",
                         "--backend", world["backend"],
                         "--epochs", "3", "--n", "4"])
        assert result.exit_code == 0, result.output
        rows = [json.loads(l) for l in result.output.splitlines()]
        assert len(rows) == 4
        assert {r["id"] for r in rows} == {"p1", "p2", "p3", "p4"}

    def test_rerank_no_positives_suggests_sum(self, world):
        result = invoke(["rerank", "--indexes", str(world["idx"]),
                         "--kb", "p1,p2", "--query", "q",
                         "--candidates", "zanzibar",
                         "--backend", world["backend"]])
        assert result.exit_code == 2
        assert "--mode sum" in result.output

    def test_explore(self, world):
        prompt = world["base"] / "prompt.txt"
        prompt.write_text("Question: where is the big fair\n\nAnswer:")
        result = invoke(["explore", "--prompt-file", str(prompt),
                         "--backend", world["backend"],
                         "--threshold", "inf"])
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output)
        assert payload["accepted"] is True
        assert payload["attempts"] == 1
        assert payload["dim"] == 16


class TestExitCodes:
    def test_conflicting_modes(self, world):
        result = invoke(["answer", "--question", "q",
                         "--indexes", str(world["idx"]),
                         "--mode", "no-rerank", "--mode", "no-explore",
                         "--report", "r.jsonl"])
        assert result.exit_code == 2
        assert "cannot be combined" in result.output
        assert "retrieval-only" in result.output

    def test_question_and_questions_conflict(self, world):
        result = invoke(["answer", "--question", "q",
                         "--questions", str(world["questions"]),
                         "--indexes", str(world["idx"]),
                         "--report", "r.jsonl"])
        assert result.exit_code == 2
        assert "not both" in result.output

    def test_neither_question_form(self, world):
        result = invoke(["answer", "--indexes", str(world["idx"]),
                         "--report", "r.jsonl"])
        assert result.exit_code == 2
        assert "required" in result.output

    def test_n_exceeding_m(self, world):
        result = invoke(["answer", "--question", "q",
                         "--indexes", str(world["idx"]),
                         "--backend", world["backend"],
                         "--m", "2", "--n", "3", "--report", "r.jsonl"])
        assert result.exit_code == 2
        assert "cannot exceed" in result.output

    def test_unknown_flag_is_usage_error(self, world):
        result = invoke(["answer", "--nonsense", "x"])
        assert result.exit_code == 2

    def test_unknown_config_key(self, world, tmp_path):
        conf = tmp_path / "bad.conf"
        conf.write_text("retrieval.zzz=1\n")
        result = invoke(["answer", "--question", "q",
                         "--indexes", str(world["idx"]),
                         "--config", str(conf), "--report", "r.jsonl"])
        assert result.exit_code == 2
        assert "unknown config key" in result.output

    def test_bad_backend_flag(self, world):
        result = invoke(["answer", "--question", "q",
                         "--indexes", str(world["idx"]),
                         "--backend", "carrier-pigeon", "--report", "r.jsonl"])
        assert result.exit_code == 2

    def test_missing_index_dir_is_usage_error(self, world):
        result = invoke(["answer", "--question", "q",
                         "--indexes", "/no/such/dir", "--report", "r.jsonl"])
        assert result.exit_code == 2

    def test_runtime_error_exits_one(self, world, tmp_path):
        # an index directory without corpus.jsonl fails at run time
        empty = tmp_path / "emptyidx"
        empty.mkdir()
        result = invoke(["answer", "--question", "q", "--indexes", str(empty),
                         "--backend", world["backend"],
                         "--report", str(tmp_path / "r.jsonl")])
        assert result.exit_code == 1

    def test_malformed_golds(self, world, tmp_path):
        report = world["base"] / "for_eval2.jsonl"
        invoke(["answer", "--questions", str(world["questions"]),
                "--indexes", str(world["idx"]), "--backend", world["backend"],
                "--report", str(report), *ANSWER_COMMON])
        bad = tmp_path / "bad_golds.jsonl"
        bad.write_text(json.dumps({"qid": "q0"}) + "\n")
        result = invoke(["eval", "--report", str(report),
                         "--golds", str(bad),
                         "--out", str(tmp_path / "s.jsonl")])
        assert result.exit_code == 1
        assert "golds" in result.output

    def test_missing_gold_for_qid(self, world, tmp_path):
        report = world["base"] / "for_eval3.jsonl"
        invoke(["answer", "--questions", str(world["questions"]),
                "--indexes", str(world["idx"]), "--backend", world["backend"],
                "--report", str(report), *ANSWER_COMMON])
        other = tmp_path / "other_golds.jsonl"
        other.write_text(json.dumps({"qid": "q99", "golds": ["x"]}) + "\n")
        result = invoke(["eval", "--report", str(report),
                         "--golds", str(other),
                         "--out", str(tmp_path / "s.jsonl")])
        assert result.exit_code == 2
        assert "q0" in result.output


class TestConfigPrecedence:
    def test_file_then_flag(self, world, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("run.mode=retrieval-only\nretrieval.m=4\nretrieval.n=4\n")
        report = tmp_path / "r.jsonl"
        result = invoke(["answer", "--questions", str(world["questions"]),
                         "--indexes", str(world["idx"]),
                         "--backend", world["backend"],
                         "--config", str(conf), "--report", str(report)])
        assert result.exit_code == 0, result.output
        assert "mode retrieval-only" in result.output

        result = invoke(["answer", "--questions", str(world["questions"]),
                         "--indexes", str(world["idx"]),
                         "--backend", world["backend"],
                         "--config", str(conf), "--mode", "no-explore",
                         "--epochs", "2", "--report", str(report)])
        assert result.exit_code == 0, result.output
        assert "mode no-explore" in result.output

    def test_help_names_method_defaults(self):
        result = invoke(["answer", "--help"])
        assert result.exit_code == 0
        assert "(method default: 100)" in result.output
        assert "(method default: 0.05)" in result.output
