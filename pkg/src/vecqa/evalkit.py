"""Answer metrics and cost accounting.

Exact match and token-level F1 follow the usual short-answer conventions:
answers are normalized (lowercase, punctuation and articles removed,
whitespace collapsed), tokenized with the shared tokenizer, and scored as the
maximum over gold answers.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .corpus import normalize_answer, tokenize

# Analytic prompt cost of the summarize-then-rank baseline (SuRe), for the
# reference row in cost reports: one candidate generation, then summary,
# validity check, and ranking each applied to both candidates.
SURE_PROMPTS_PER_QUESTION = 7

# The full pipeline's prompt cost: one candidate generation per question from
# the initial context and one from the reranked context with exploration.
EMBQA_PROMPTS_PER_QUESTION = 2


def _answer_tokens(text: str) -> list[str]:
    return tokenize(normalize_answer(text))


def exact_match(prediction: str, golds: Sequence[str]) -> float:
    """1.0 when the normalized prediction equals any normalized gold."""
    if not golds:
        raise ValueError("need at least one gold answer")
    pred = normalize_answer(prediction)
    return float(any(pred == normalize_answer(g) for g in golds))


def f1(prediction: str, golds: Sequence[str]) -> float:
    """Max token-level F1 over gold answers.

    Uses 2 * overlap / (len(pred) + len(gold)), the harmonic mean of
    precision and recall in one division.  Both sides empty scores 1,
    exactly one side empty scores 0.
    """
    if not golds:
        raise ValueError("need at least one gold answer")
    pred_toks = _answer_tokens(prediction)
    best = 0.0
    for g in golds:
        gold_toks = _answer_tokens(g)
        if not pred_toks and not gold_toks:
            score = 1.0
        elif not pred_toks or not gold_toks:
            score = 0.0
        else:
            overlap = sum((Counter(pred_toks) & Counter(gold_toks)).values())
            score = 0.0 if overlap == 0 else 2.0 * overlap / (len(pred_toks) + len(gold_toks))
        best = max(best, score)
    return best


def gt_at_k(passages_text: Sequence[str], golds: Sequence[str], k: int) -> int:
    """How many of the first k passages contain a gold answer.

    Containment is substring matching after normalization, the same rule the
    refiner uses to label positives.
    """
    if not golds:
        raise ValueError("need at least one gold answer")
    normed = [normalize_answer(g) for g in golds]
    normed = [g for g in normed if g]
    count = 0
    for text in list(passages_text)[:k]:
        hay = normalize_answer(text)
        if any(g in hay for g in normed):
            count += 1
    return count


def candidate_coverage(candidates: Sequence[str], golds: Sequence[str]) -> float:
    """1.0 when any candidate matches a gold by containment either way."""
    if not golds:
        raise ValueError("need at least one gold answer")
    normed_golds = [normalize_answer(g) for g in golds]
    normed_golds = [g for g in normed_golds if g]
    for c in candidates:
        nc = normalize_answer(c)
        if not nc:
            continue
        for g in normed_golds:
            if nc in g or g in nc:
                return 1.0
    return 0.0


@dataclass
class QuestionScore:
    qid: str
    em: float
    f1: float
    coverage: float | None = None
    gt_initial: int | None = None
    gt_reranked: int | None = None


@dataclass
class EvalReport:
    scores: list[QuestionScore] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.scores)

    def aggregate(self) -> dict:
        n = max(self.n, 1)
        out = {
            "questions": self.n,
            "em": sum(s.em for s in self.scores) / n,
            "f1": sum(s.f1 for s in self.scores) / n,
        }
        cov = [s.coverage for s in self.scores if s.coverage is not None]
        if cov:
            out["coverage"] = sum(cov) / len(cov)
        gi = [s.gt_initial for s in self.scores if s.gt_initial is not None]
        gr = [s.gt_reranked for s in self.scores if s.gt_reranked is not None]
        if gi:
            out["gt_at_k_initial"] = sum(gi) / len(gi)
        if gr:
            out["gt_at_k_reranked"] = sum(gr) / len(gr)
        return out


def evaluate_records(records: Sequence[Mapping], golds_by_qid: Mapping[str, Sequence[str]],
                     corpus=None, k: int = 10) -> EvalReport:
    """Score answer records against gold answers.

    When a corpus is supplied, ground-truth presence in the prompt contexts
    (before and after reranking) is scored as well.
    """
    report = EvalReport()
    for rec in records:
        qid = rec["qid"]
        if qid not in golds_by_qid:
            raise KeyError(f"no gold answers for qid {qid!r}")
        golds = list(golds_by_qid[qid])
        score = QuestionScore(
            qid=qid,
            em=exact_match(rec["final_answer"], golds),
            f1=f1(rec["final_answer"], golds),
            coverage=candidate_coverage(rec.get("candidates_final", []), golds),
        )
        if corpus is not None:
            initial = rec.get("context_initial") or []
            score.gt_initial = gt_at_k([corpus[p].text for p in initial], golds, k)
            reranked = rec.get("context_reranked")
            if reranked:
                score.gt_reranked = gt_at_k([corpus[p].text for p in reranked],
                                            golds, k)
        report.scores.append(score)
    return report


def cost_summary(records: Sequence[Mapping]) -> dict:
    """Mean per-question call, token, and time costs grouped by mode.

    Includes an analytic reference row for the summarize-then-rank baseline
    (7 prompts per question) next to the measured numbers.
    """
    groups: dict[str, list[Mapping]] = {}
    for rec in records:
        groups.setdefault(rec.get("mode", "unknown"), []).append(rec)
    rows = {}
    for mode, recs in sorted(groups.items()):
        n = len(recs)
        usage = [r.get("usage", {}) for r in recs]
        rows[mode] = {
            "questions": n,
            "generate_calls_per_question": sum(u.get("generate_calls", 0)
                                               for u in usage) / n,
            "output_tokens_per_question": sum(u.get("output_tokens", 0)
                                              for u in usage) / n,
            "probe_calls_per_question": sum(u.get("probe_calls", 0)
                                            for u in usage) / n,
            "wall_time_ms_per_question": sum(u.get("wall_time_ms", 0.0)
                                             for u in usage) / n,
        }
    return {
        "modes": rows,
        "reference": {
            "sure_prompts_per_question": SURE_PROMPTS_PER_QUESTION,
            "embqa_prompts_per_question": EMBQA_PROMPTS_PER_QUESTION,
        },
    }


def render_cost_table(summary: Mapping) -> str:
    """Human-readable cost table with the analytic reference row."""
    header = f"{'mode':<24}{'questions':>10}{'calls/q':>10}{'tokens/q':>10}{'probes/q':>10}{'ms/q':>12}"
    lines = [header, "-" * len(header)]
    for mode, row in summary["modes"].items():
        lines.append(f"{mode:<24}{row['questions']:>10}"
                     f"{row['generate_calls_per_question']:>10.2f}"
                     f"{row['output_tokens_per_question']:>10.2f}"
                     f"{row['probe_calls_per_question']:>10.2f}"
                     f"{row['wall_time_ms_per_question']:>12.2f}")
    ref = summary["reference"]
    lines.append(f"{'SuRe (analytic)':<24}{'-':>10}"
                 f"{ref['sure_prompts_per_question']:>10.2f}{'-':>10}{'-':>10}{'-':>12}")
    return "\n".join(lines)


def render_eval_table(report: EvalReport) -> str:
    agg = report.aggregate()
    lines = [f"questions: {agg['questions']}",
             f"exact match: {agg['em']:.4f}",
             f"token F1:    {agg['f1']:.4f}"]
    if "coverage" in agg:
        lines.append(f"coverage:    {agg['coverage']:.4f}")
    if "gt_at_k_initial" in agg:
        lines.append(f"gold-in-context@k before rerank: {agg['gt_at_k_initial']:.4f}")
    if "gt_at_k_reranked" in agg:
        lines.append(f"gold-in-context@k after rerank:  {agg['gt_at_k_reranked']:.4f}")
    return "\n".join(lines)
