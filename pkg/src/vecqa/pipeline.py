"""End-to-end answering: retrieve, generate candidates, refine and rerank,
explore, regenerate, and pick the lowest-entropy candidate.

Per question the engine issues exactly two counted generation calls in the
full mode (one per candidate prompt) and one in retrieval-only mode.
Hidden-state probes used by the exploration gate and embedding calls are
booked separately and never inflate the prompt count.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .backends import Backend, GenerationRequest, GenerationTrace, UsageMeter
from .corpus import Corpus, Passage
from .dense import DenseIndex, dense_top_k
from .errors import (CandidateParseError, ConfigError, NoEvidenceError,
                     RefinementSkippedError)
from .gate import GateConfig, GateSample, acquire_exploratory
from .lexical import LexicalIndex, lexical_top_k
from .refine import (RefinerConfig, label_passages, prompt_rerank, refine_query,
                     rerank_kb, train_refiner)

logger = logging.getLogger(__name__)

MODES = ("embqa", "retrieval-only", "no-rerank", "no-explore")
MODE_ALIASES = {"no-explore-no-rerank": "retrieval-only", "full": "embqa"}

_COUNT_WORDS = {1: "one", 2: "two", 3: "three", 4: "four", 5: "five",
                6: "six", 7: "seven", 8: "eight", 9: "nine", 10: "ten"}
_PLACEHOLDERS = ("xx", "yy", "zz", "ww", "vv", "uu", "tt", "ss", "rr", "qq")


# -- candidate prompt -------------------------------------------------------

def build_candidate_prompt(question: str, passages: Sequence[Passage],
                           k: int = 2) -> str:
    """Render the candidate-generation prompt over the given passages."""
    if not passages:
        raise NoEvidenceError("candidate prompt needs at least one passage")
    if k < 1:
        raise ValueError("k must be at least 1")
    count = _COUNT_WORDS.get(k, str(k))
    form = ", ".join(f"({chr(ord('a') + i)}) {_PLACEHOLDERS[i % len(_PLACEHOLDERS)]}"
                     for i in range(k))
    blocks = [
        f"Below are {len(passages)} passages related to the question at the end.",
        f"After reading the passages, provide {count} correct candidates for the "
        "answer to the question.",
        f"Each answer should be in the form: {form}, and should not exceed 3 words.",
    ]
    for i, p in enumerate(passages, start=1):
        blocks.append(f"Passage #{i} Title: {p.title}")
        blocks.append(f"Passage #{i} Text: {p.text}")
    blocks.append(f"Question: {question}")
    blocks.append("Answer:")
    return "\n\n".join(blocks)


def parse_candidates(reply: str, k: int) -> tuple[list[str], list[tuple[int, int]]]:
    """Extract answers after "(a)", "(b)", ... markers.

    Each span runs from the end of its marker to the next marker, newline, or
    comma, whitespace-trimmed.  Returns the answers and their character spans
    in the reply.  Fewer than k parsed answers is tolerated with a warning;
    zero is a parse error carrying the raw reply.
    """
    markers = [f"({chr(ord('a') + i)})" for i in range(k)]
    answers: list[str] = []
    spans: list[tuple[int, int]] = []
    for m in markers:
        pos = reply.find(m)
        if pos < 0:
            continue
        start = pos + len(m)
        end = len(reply)
        for boundary in [",", "\n", *markers]:
            b = reply.find(boundary, start)
            if b >= 0:
                end = min(end, b)
        raw = reply[start:end]
        text = raw.strip()
        if not text:
            continue
        s = start + (len(raw) - len(raw.lstrip()))
        spans.append((s, s + len(text)))
        answers.append(text)
    if not answers:
        raise CandidateParseError(
            f"no candidate markers {markers} found in reply", reply=reply)
    if len(answers) < k:
        logger.warning("parsed %d of %d expected candidates from %r",
                       len(answers), k, reply[:80])
    return answers, spans


@dataclass
class CandidateSet:
    """Candidates extracted from one generation, with their reply spans."""

    answers: list[str]
    spans: list[tuple[int, int]]
    trace: GenerationTrace
    source: str  # "initial" or "exploratory"


@dataclass
class AnswerDecision:
    final: str
    entropies: list[float]
    chosen_index: int


# -- entropy selection -------------------------------------------------------

def token_entropy(logprobs) -> float:
    """Shannon entropy in nats of a renormalized log-probability set.

    Accepts a token->logprob mapping or a sequence of logprobs.  The mass is
    renormalized to sum to one, so a uniform shift of every logprob (any
    positive rescaling of the probabilities) leaves the entropy unchanged.
    """
    if isinstance(logprobs, Mapping):
        vals = np.asarray(list(logprobs.values()), dtype=np.float64)
    else:
        vals = np.asarray(logprobs, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("empty distribution")
    probs = np.exp(vals)
    total = float(probs.sum())
    if not np.isfinite(total) or total <= 0.0:
        raise ValueError("distribution mass must be positive and finite")
    if total > 1.0 + 1e-6:
        raise ValueError(f"probabilities sum to {total}, above 1 + 1e-6")
    p = probs / total
    terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return float(-terms.sum())


def _token_char_spans(trace: GenerationTrace) -> list[tuple[int, int]]:
    spans = []
    at = 0
    for t in trace.tokens:
        spans.append((at, at + len(t.token)))
        at += len(t.token)
    return spans


def candidate_entropy(trace: GenerationTrace, span: tuple[int, int]) -> float:
    """Mean per-token entropy over the answer's span of the reply.

    The span is in reply characters; a token participates when its text
    overlaps the span.  Empty spans or spans outside the traced text are
    errors.
    """
    c0, c1 = span
    if c1 <= c0:
        raise ValueError(f"empty candidate span {span}")
    if c0 < 0 or c1 > len(trace.text):
        raise ValueError(f"span {span} falls outside the traced text "
                         f"(length {len(trace.text)})")
    ents = []
    for (s, e), tok in zip(_token_char_spans(trace), trace.tokens):
        if e > c0 and s < c1:
            ents.append(token_entropy(tok.logprobs))
    if not ents:
        raise ValueError(f"span {span} overlaps no traced tokens")
    return float(np.mean(ents))


def select_answer(candidates: CandidateSet) -> AnswerDecision:
    """Pick the candidate with the lowest mean token entropy; ties take the
    earliest index."""
    if not candidates.answers:
        raise ValueError("no candidates to select from")
    entropies = [candidate_entropy(candidates.trace, span)
                 for span in candidates.spans]
    chosen = min(range(len(entropies)), key=lambda i: (entropies[i], i))
    return AnswerDecision(final=candidates.answers[chosen],
                          entropies=entropies, chosen_index=chosen)


# -- engine -------------------------------------------------------------------

def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a tuple of hashables."""
    blob = "\x1f".join(repr(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big") >> 1


@dataclass
class EngineConfig:
    mode: str = "embqa"
    first_stage: str = "lexical"       # "lexical" | "dense"
    working_set_size: int = 100        # passages retrieved per question
    prompt_passages: int = 10          # passages rendered into the prompt
    candidates: int = 2                # answers requested per generation
    max_tokens: int = 16
    temperature: float = 0.0
    top_logprobs: int = 20
    rerank_mode: str = "embedding"     # "embedding" | "prompt" | "none"
    refiner_mode: str = "learned"      # "learned" | "sum"
    metric: str = "dot"                # similarity for dense scoring
    seed: int = 0

    def __post_init__(self):
        self.mode = MODE_ALIASES.get(self.mode, self.mode)
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.first_stage not in ("lexical", "dense"):
            raise ConfigError(f"unknown first stage {self.first_stage!r}")
        if self.prompt_passages > self.working_set_size:
            raise ConfigError(
                f"prompt_passages={self.prompt_passages} cannot exceed "
                f"working_set_size={self.working_set_size}")
        if self.rerank_mode not in ("embedding", "prompt", "none"):
            raise ConfigError(f"unknown rerank mode {self.rerank_mode!r}")
        if self.refiner_mode not in ("learned", "sum"):
            raise ConfigError(f"unknown refiner mode {self.refiner_mode!r}")
        if self.metric not in ("dot", "cosine"):
            raise ConfigError(f"unknown metric {self.metric!r}")


class AnswerEngine:
    """Holds the indexes, backend, and configuration for a run."""

    def __init__(self, corpus: Corpus, backend: Backend, config: EngineConfig,
                 refiner: RefinerConfig | None = None,
                 gate: GateConfig | None = None,
                 lexical: LexicalIndex | None = None,
                 dense: DenseIndex | None = None):
        self.corpus = corpus
        self.backend = backend
        self.config = config
        self.refiner = refiner or RefinerConfig()
        self.gate = gate or GateConfig()
        self.lexical = lexical
        self.dense = dense
        if config.first_stage == "lexical" and lexical is None:
            raise ConfigError("first_stage=lexical needs a lexical index")
        if config.first_stage == "dense" and dense is None:
            raise ConfigError("first_stage=dense needs a dense index")
        needs_rerank = config.mode in ("embqa", "no-explore")
        if needs_rerank and config.rerank_mode == "embedding" and dense is None:
            raise ConfigError(
                "embedding rerank needs a dense index; with a lexical first "
                "stage, build one or switch rerank to 'prompt'")

    # -- steps ---------------------------------------------------------------

    def _retrieve(self, meter: UsageMeter, question: str) -> list[str]:
        m = self.config.working_set_size
        if self.config.first_stage == "lexical":
            hits = lexical_top_k(self.lexical, question, m)
        else:
            (qvec,) = meter.embed([question])
            hits = dense_top_k(self.dense, qvec, m)
        if not hits:
            raise NoEvidenceError(f"retrieval found nothing for {question!r}")
        return [pid for pid, _ in hits]

    def _passages(self, ids: Sequence[str]) -> list[Passage]:
        return [self.corpus[pid] for pid in ids]

    def _generate_candidates(self, meter: UsageMeter, question: str,
                             context_ids: Sequence[str], source: str,
                             inject: np.ndarray | None = None) -> CandidateSet:
        prompt = build_candidate_prompt(question, self._passages(context_ids),
                                        self.config.candidates)
        request = GenerationRequest(prompt=prompt,
                                    max_tokens=self.config.max_tokens,
                                    temperature=self.config.temperature,
                                    inject_embedding=inject,
                                    top_logprobs=self.config.top_logprobs)
        trace = meter.generate(request)
        try:
            answers, spans = parse_candidates(trace.text, self.config.candidates)
        except CandidateParseError:
            logger.warning("candidate parse failed; retrying the identical prompt")
            trace = meter.generate(request)
            answers, spans = parse_candidates(trace.text, self.config.candidates)
        return CandidateSet(answers=answers, spans=spans, trace=trace,
                            source=source)

    def _rerank(self, meter: UsageMeter, question: str, working: list[str],
                candidates: list[str], qindex: int) -> tuple[list[str], dict]:
        n = self.config.prompt_passages
        detail: dict = {"skipped": False, "initial_loss": None, "final_loss": None}
        if self.config.rerank_mode == "prompt":
            graded = prompt_rerank(meter, question, self._passages(working))
            return [p.id for p, _ in graded[:n]], detail
        (e_q,) = meter.embed([question])
        cand_vecs = meter.embed(candidates)
        e_y = np.mean(np.vstack(cand_vecs), axis=0)
        if self.config.refiner_mode == "sum":
            e_new = e_y + e_q
        else:
            pos_ids, neg_ids = label_passages(self._passages(working), candidates)
            if not pos_ids:
                detail["skipped"] = True
                logger.info("no positive passages for %r; keeping the raw query",
                            question[:60])
                e_new = e_q
            else:
                cfg = replace(self.refiner,
                              seed=derive_seed(self.refiner.seed, qindex))
                result = train_refiner(self.dense.rows_for(pos_ids),
                                       self.dense.rows_for(neg_ids),
                                       e_q, e_y, cfg)
                detail["initial_loss"] = result.initial_loss
                detail["final_loss"] = result.final_loss
                e_new = refine_query(result.weights, e_y, e_q)
        ranked = rerank_kb(self.dense, working, e_new, n)
        return [pid for pid, _ in ranked], detail

    # -- one question ----------------------------------------------------------

    def answer(self, question: str, qid: str | None = None,
               qindex: int = 0) -> dict:
        meter = UsageMeter(self.backend)
        mode = self.config.mode
        working = self._retrieve(meter, question)
        cn_initial = working[:self.config.prompt_passages]

        initial = self._generate_candidates(meter, question, cn_initial, "initial")

        rerank_on = mode in ("embqa", "no-explore") and self.config.rerank_mode != "none"
        explore_on = mode in ("embqa", "no-rerank")

        cn_reranked: list[str] | None = None
        refinement: dict | None = None
        context = cn_initial
        if rerank_on:
            cn_reranked, refinement = self._rerank(meter, question, working,
                                                   initial.answers, qindex)
            context = cn_reranked

        gate_sample: GateSample | None = None
        final_set = initial
        if mode != "retrieval-only":
            inject = None
            if explore_on:
                prompt = build_candidate_prompt(question, self._passages(context),
                                                self.config.candidates)
                gate_cfg = replace(self.gate,
                                   seed=derive_seed(self.gate.seed,
                                                    self.config.seed, qindex))
                gate_sample = acquire_exploratory(meter, prompt, gate_cfg)
                inject = gate_sample.embedding
            final_set = self._generate_candidates(meter, question, context,
                                                  "exploratory", inject=inject)

        decision = select_answer(final_set)

        return {
            "qid": qid if qid is not None else f"q{qindex}",
            "question": question,
            "mode": mode,
            "working_set": list(working),
            "context_initial": list(cn_initial),
            "context_reranked": cn_reranked,
            "candidates_initial": list(initial.answers),
            "candidates_final": list(final_set.answers),
            "gate": None if gate_sample is None else {
                "statistic": gate_sample.statistic,
                "attempts": gate_sample.attempt,
                "accepted": gate_sample.accepted,
            },
            "refinement": refinement,
            "entropies": decision.entropies,
            "chosen_index": decision.chosen_index,
            "final_answer": decision.final,
            "usage": meter.counters.as_dict(),
        }


def run_batch(engine: AnswerEngine, questions: Sequence[Mapping],
              workers: int = 1) -> list[dict]:
    """Answer a batch; results come back in input order.

    Per-question seeds derive from the question's position, so the records
    are identical no matter how many workers run.
    """
    if workers < 1:
        raise ConfigError("workers must be at least 1")

    def one(idx: int) -> dict:
        q = questions[idx]
        return engine.answer(q["question"], qid=q.get("qid"), qindex=idx)

    if workers == 1:
        return [one(i) for i in range(len(questions))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(len(questions))))
