"""EM/F1 scoring, context metrics, and cost accounting."""

import pytest

from vecqa.corpus import Corpus, Passage
from vecqa.evalkit import (EMBQA_PROMPTS_PER_QUESTION,
                           SURE_PROMPTS_PER_QUESTION, EvalReport,
                           QuestionScore, candidate_coverage, cost_summary,
                           evaluate_records, exact_match, f1, gt_at_k,
                           render_cost_table, render_eval_table)


class TestExactMatch:
    @pytest.mark.parametrize("pred,golds,want", [
        ("Paris", ["paris"], 1.0),
        ("The Beatles", ["Beatles"], 1.0),          # article stripped
        ("Paris, France", ["Paris"], 0.0),
        ("paris", ["Lyon", "PARIS!"], 1.0),          # max over golds
        ("", ["x"], 0.0),
    ])
    def test_hand_cases(self, pred, golds, want):
        assert exact_match(pred, golds) == want

    def test_needs_golds(self):
        with pytest.raises(ValueError):
            exact_match("x", [])


class TestF1:
    def test_partial_overlap_is_point_eight(self):
        # pred 2 tokens, gold 3, overlap 2: 2*2/(2+3) = 4/5
        assert f1("brooklyn bridge", ["the brooklyn bridge span"]) == 4 / 5

    @pytest.mark.parametrize("pred,golds,want", [
        ("exact words", ["exact words"], 1.0),
        ("none shared", ["different entirely"], 0.0),
        ("x y", ["x y z w"], 2 * 2 / (2 + 4)),
        ("", [""], 1.0),                  # both empty after normalizing
        ("", ["word"], 0.0),
        ("word", ["the"], 0.0),           # gold normalizes to empty
    ])
    def test_hand_cases(self, pred, golds, want):
        assert f1(pred, golds) == want

    def test_max_over_golds(self):
        assert f1("a b", ["zzz", "a b"]) == 1.0

    def test_duplicate_tokens_use_multiset_overlap(self):
        # pred [x x], gold [x]: multiset overlap 1 -> 2*1/(2+1)
        assert f1("x x", ["x"]) == 2 / 3

    def test_needs_golds(self):
        with pytest.raises(ValueError):
            f1("x", [])


class TestGtAtK:
    def test_counts_prefix_hits(self):
        texts = ["the answer is Paris", "nothing here",
                 "paris again", "also Paris"]
        assert gt_at_k(texts, ["Paris"], k=2) == 1
        assert gt_at_k(texts, ["Paris"], k=3) == 2
        assert gt_at_k(texts, ["Paris"], k=10) == 3

    def test_normalized_containment(self):
        assert gt_at_k(["The CAPITAL!"], ["capital"], k=1) == 1

    def test_empty_normalized_gold_ignored(self):
        assert gt_at_k(["anything at all"], ["the"], k=1) == 0

    def test_needs_golds(self):
        with pytest.raises(ValueError):
            gt_at_k(["x"], [], k=1)


class TestCoverage:
    def test_candidate_inside_gold(self):
        assert candidate_coverage(["york"], ["New York City"]) == 1.0

    def test_gold_inside_candidate(self):
        assert candidate_coverage(["greater new york"], ["New York"]) == 1.0

    def test_no_match(self):
        assert candidate_coverage(["rome", "lyon"], ["Paris"]) == 0.0

    def test_empty_candidate_ignored(self):
        assert candidate_coverage(["the", ""], ["Paris"]) == 0.0

    def test_needs_golds(self):
        with pytest.raises(ValueError):
            candidate_coverage(["x"], [])


def record(qid: str, answer: str, mode: str = "embqa", **extra) -> dict:
    rec = {"qid": qid, "final_answer": answer, "mode": mode,
           "candidates_final": [answer],
           "usage": {"generate_calls": 2, "output_tokens": 10,
                     "probe_calls": 3, "wall_time_ms": 0.0}}
    rec.update(extra)
    return rec


class TestEvaluateRecords:
    def test_joins_on_qid(self):
        records = [record("q0", "paris"), record("q1", "rome")]
        golds = {"q0": ["Paris"], "q1": ["Milan"]}
        report = evaluate_records(records, golds)
        assert [s.qid for s in report.scores] == ["q0", "q1"]
        assert [s.em for s in report.scores] == [1.0, 0.0]
        agg = report.aggregate()
        assert agg["questions"] == 2
        assert agg["em"] == 0.5

    def test_missing_gold_is_an_error(self):
        with pytest.raises(KeyError, match="q9"):
            evaluate_records([record("q9", "x")], {"q0": ["x"]})

    def test_context_metrics_with_corpus(self):
        corpus = Corpus([
            Passage(id="p1", title="t", text="paris is the one"),
            Passage(id="p2", title="t", text="not it"),
            Passage(id="p3", title="t", text="paris encore"),
        ])
        rec = record("q0", "paris",
                     context_initial=["p2", "p1"],
                     context_reranked=["p1", "p3"])
        report = evaluate_records([rec], {"q0": ["Paris"]}, corpus=corpus, k=2)
        score = report.scores[0]
        assert score.gt_initial == 1
        assert score.gt_reranked == 2
        agg = report.aggregate()
        assert agg["gt_at_k_initial"] == 1.0
        assert agg["gt_at_k_reranked"] == 2.0

    def test_no_rerank_context_left_unscored(self):
        corpus = Corpus([Passage(id="p1", title="t", text="paris")])
        rec = record("q0", "paris", context_initial=["p1"],
                     context_reranked=None)
        report = evaluate_records([rec], {"q0": ["paris"]}, corpus=corpus)
        assert report.scores[0].gt_reranked is None
        assert "gt_at_k_reranked" not in report.aggregate()

    def test_coverage_scored_from_final_candidates(self):
        rec = record("q0", "wrong", candidates_final=["wrong", "paris"])
        report = evaluate_records([rec], {"q0": ["Paris"]})
        assert report.scores[0].coverage == 1.0
        assert report.scores[0].em == 0.0


class TestAggregate:
    def test_recomputes_from_scores(self):
        report = EvalReport(scores=[
            QuestionScore(qid="a", em=1.0, f1=1.0, coverage=1.0),
            QuestionScore(qid="b", em=0.0, f1=0.5, coverage=0.0),
            QuestionScore(qid="c", em=0.0, f1=0.0),
        ])
        agg = report.aggregate()
        assert agg["em"] == pytest.approx(1 / 3)
        assert agg["f1"] == pytest.approx(0.5)
        assert agg["coverage"] == pytest.approx(0.5)  # over the two scored

    def test_empty_report(self):
        agg = EvalReport().aggregate()
        assert agg == {"questions": 0, "em": 0.0, "f1": 0.0}


class TestCostSummary:
    def records(self):
        out = [record(f"q{i}", "x", mode="embqa") for i in range(4)]
        for r in out:
            r["usage"] = {"generate_calls": 2, "output_tokens": 12,
                          "probe_calls": 4, "wall_time_ms": 1.0}
        out += [record("r0", "y", mode="retrieval-only")]
        out[-1]["usage"] = {"generate_calls": 1, "output_tokens": 5,
                            "probe_calls": 0, "wall_time_ms": 0.5}
        return out

    def test_groups_by_mode(self):
        summary = cost_summary(self.records())
        embqa = summary["modes"]["embqa"]
        assert embqa["questions"] == 4
        assert embqa["generate_calls_per_question"] == 2.0
        assert embqa["output_tokens_per_question"] == 12.0
        assert embqa["probe_calls_per_question"] == 4.0
        ro = summary["modes"]["retrieval-only"]
        assert ro["generate_calls_per_question"] == 1.0

    def test_reference_constants(self):
        summary = cost_summary(self.records())
        assert summary["reference"]["sure_prompts_per_question"] == 7
        assert summary["reference"]["embqa_prompts_per_question"] == 2
        assert SURE_PROMPTS_PER_QUESTION == 7
        assert EMBQA_PROMPTS_PER_QUESTION == 2

    def test_render_includes_reference_row(self):
        table = render_cost_table(cost_summary(self.records()))
        assert "SuRe (analytic)" in table
        assert "7.00" in table
        assert "embqa" in table
        assert "retrieval-only" in table

    def test_render_eval_table(self):
        report = EvalReport(scores=[
            QuestionScore(qid="a", em=1.0, f1=0.8, coverage=1.0,
                          gt_initial=2, gt_reranked=3)])
        text = render_eval_table(report)
        assert "questions: 1" in text
        assert "exact match: 1.0000" in text
        assert "token F1:    0.8000" in text
        assert "before rerank: 2.0000" in text
        assert "after rerank:  3.0000" in text
