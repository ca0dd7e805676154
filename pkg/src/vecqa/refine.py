"""Per-query refinement of the query embedding, and knowledge-base reranking.

The refiner is a pair of square matrices applied to the candidate-answer
embedding and the query embedding:

    e_new = W1 @ e_y + W2 @ e_q

Both matrices start at identity (so an untrained refiner reduces to plain
summation) and are fitted per query by gradient descent on a contrastive
objective.  Passages whose normalized text contains a normalized candidate
answer are positives; negatives are drawn from the rest of the working set at
five per positive.  The loss for one positive p against the pooled set A of
positives and negatives, with temperature tau, is

    -log( exp(<e_new, p>/tau) / sum_{x in A} exp(<e_new, x>/tau) )

averaged over positives.  Similarity inside the objective is the raw inner
product; the search-time metric of the dense index is configured separately.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Passage, normalize_answer
from .dense import DenseIndex, dense_top_k, ensure_vector, load_vector_store, save_vector_store
from .errors import DimMismatchError, EmptyCorpusError, FormatError, RefinementSkippedError
from .backends import Backend, GenerationRequest

logger = logging.getLogger(__name__)

NEGATIVES_PER_POSITIVE = 5

_WEIGHTS_MAGIC = b"VQREFWT1"
_INT_RE = re.compile(r"-?\d+")

RELEVANCE_PROMPT_TEMPLATE = (
    "Query: {query}\n"
    "\n"
    "Document: {document}\n"
    "\n"
    "From a scale of 0 to 4, judge the relevance between the query and the document.\n"
    "\n"
    "0 means 'Not Relevant', 1 means 'Little Relevant', 2 means 'Somewhat Relevant', "
    "3 means 'Highly Relevant', 4 means 'Perfectly Relevant'.\n"
    "\n"
    "Return only the integer."
)


@dataclass
class RefinerWeights:
    w1: np.ndarray  # applied to the candidate-answer embedding
    w2: np.ndarray  # applied to the query embedding

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=np.float64)
        w2 = np.asarray(self.w2, dtype=np.float64)
        if w1.ndim != 2 or w1.shape[0] != w1.shape[1]:
            raise DimMismatchError(f"w1 must be square, got shape {w1.shape}")
        if w2.shape != w1.shape:
            raise DimMismatchError(f"w1/w2 shapes disagree: {w1.shape} vs {w2.shape}")
        self.w1, self.w2 = w1, w2

    @property
    def dim(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "RefinerWeights":
        return cls(w1=np.eye(dim), w2=np.eye(dim))


@dataclass
class ContrastiveBatch:
    """One training batch: the anchor pair plus labeled passage embeddings."""

    e_q: np.ndarray
    e_y: np.ndarray
    positives: np.ndarray  # (P, d)
    negatives: np.ndarray  # (N, d), may be empty

    def __post_init__(self):
        self.e_q = ensure_vector(self.e_q)
        self.e_y = ensure_vector(self.e_y, dim=self.e_q.shape[0])
        d = self.e_q.shape[0]
        self.positives = np.asarray(self.positives, dtype=np.float64).reshape(-1, d)
        self.negatives = np.asarray(self.negatives, dtype=np.float64).reshape(-1, d)
        if self.positives.shape[0] == 0:
            raise RefinementSkippedError("a contrastive batch needs at least one positive")


@dataclass
class RefinerConfig:
    tau: float = 0.1
    lr: float = 0.05
    epochs: int = 30
    batch_size: int | None = None  # None trains on all positives at once
    seed: int = 0


@dataclass
class TrainResult:
    weights: RefinerWeights
    initial_loss: float
    final_loss: float
    epoch_losses: list[float] = field(default_factory=list)


def label_passages(passages: Sequence[Passage],
                   candidates: Sequence[str]) -> tuple[list[str], list[str]]:
    """Split a working set by candidate containment.

    A passage is positive when any normalized candidate occurs as a substring
    of its normalized text.  Candidates that normalize to the empty string are
    ignored (they would match everything).  Returns (positive ids, negative
    ids) in the working-set order.
    """
    if not passages:
        raise EmptyCorpusError("cannot label an empty working set")
    if not candidates:
        raise ValueError("need at least one candidate answer")
    normed = [normalize_answer(c) for c in candidates]
    normed = [c for c in normed if c]
    pos, neg = [], []
    for p in passages:
        text = normalize_answer(p.text)
        if any(c in text for c in normed):
            pos.append(p.id)
        else:
            neg.append(p.id)
    return pos, neg


def sample_negatives(pool: Sequence[str], positive_count: int, seed: int) -> list[str]:
    """Uniform sample without replacement of min(5 * positives, |pool|) ids.

    The pool is put in sorted order before sampling so the draw depends only
    on its contents and the seed.
    """
    if positive_count < 0:
        raise ValueError("positive_count must be non-negative")
    ordered = sorted(pool)
    take = min(NEGATIVES_PER_POSITIVE * positive_count, len(ordered))
    if take == 0:
        return []
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(ordered), size=take, replace=False)
    return [ordered[i] for i in sorted(picked)]


def refine_query(weights: RefinerWeights, e_y, e_q) -> np.ndarray:
    ey = ensure_vector(e_y, dim=weights.dim)
    eq = ensure_vector(e_q, dim=weights.dim)
    return weights.w1 @ ey + weights.w2 @ eq


def infonce_loss(e_new, positives, negatives, tau: float) -> float:
    """Mean contrastive loss of the refined query against a labeled batch."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    e = ensure_vector(e_new)
    pos = np.asarray(positives, dtype=np.float64).reshape(-1, e.shape[0])
    neg = np.asarray(negatives, dtype=np.float64).reshape(-1, e.shape[0])
    if pos.shape[0] == 0:
        raise RefinementSkippedError("contrastive loss needs at least one positive")
    sims_pos = pos @ e / tau
    sims_all = np.concatenate([sims_pos, neg @ e / tau])
    m = sims_all.max()
    lse = m + np.log(np.exp(sims_all - m).sum())
    return float(lse - sims_pos.mean())


def infonce_grad(weights: RefinerWeights, batch: ContrastiveBatch,
                 tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradient of ``infonce_loss`` composed with ``refine_query``.

    With e = W1 e_y + W2 e_q and A the pooled positives and negatives,

        dL/de  = ( sum_x softmax(s)_x * x  -  mean(positives) ) / tau
        dL/dW1 = outer(dL/de, e_y),   dL/dW2 = outer(dL/de, e_q)

    because the log-sum-exp term is shared by every positive's loss term.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    e = refine_query(weights, batch.e_y, batch.e_q)
    allx = np.vstack([batch.positives, batch.negatives])
    sims = allx @ e / tau
    m = sims.max()
    w = np.exp(sims - m)
    soft = w / w.sum()
    dl_de = (soft @ allx - batch.positives.mean(axis=0)) / tau
    return np.outer(dl_de, batch.e_y), np.outer(dl_de, batch.e_q)


def train_refiner(pos_embs, neg_pool_embs, e_q, e_y,
                  config: RefinerConfig) -> TrainResult:
    """Fit per-query refiner weights by gradient descent from identity.

    Each epoch draws a fresh negative sample at five per positive from the
    pool and takes one descent step per mini-batch (default: one full-batch
    step).  The returned weights are the best epoch by loss over the full
    labeled set, so the reported final loss never exceeds the initial loss.
    """
    eq = ensure_vector(e_q)
    ey = ensure_vector(e_y, dim=eq.shape[0])
    d = eq.shape[0]
    pos = np.asarray(pos_embs, dtype=np.float64).reshape(-1, d)
    pool = np.asarray(neg_pool_embs, dtype=np.float64).reshape(-1, d)
    if pos.shape[0] == 0:
        raise RefinementSkippedError("no positive passages; keep the unrefined query")

    def full_loss(w: RefinerWeights) -> float:
        return infonce_loss(refine_query(w, ey, eq), pos, pool, config.tau)

    weights = RefinerWeights.identity(d)
    initial = full_loss(weights)
    best_w, best_loss = weights, initial
    epoch_losses: list[float] = []
    rng = np.random.default_rng(config.seed)
    w1 = weights.w1.copy()
    w2 = weights.w2.copy()
    batch = config.batch_size or pos.shape[0]

    for _ in range(config.epochs):
        order = rng.permutation(pos.shape[0])
        for start in range(0, len(order), batch):
            chunk = pos[order[start:start + batch]]
            take = min(NEGATIVES_PER_POSITIVE * chunk.shape[0], pool.shape[0])
            if take > 0:
                neg = pool[np.sort(rng.choice(pool.shape[0], size=take, replace=False))]
            else:
                neg = pool[:0]
            cur = RefinerWeights(w1=w1, w2=w2)
            g1, g2 = infonce_grad(cur, ContrastiveBatch(e_q=eq, e_y=ey,
                                                        positives=chunk,
                                                        negatives=neg), config.tau)
            w1 = w1 - config.lr * g1
            w2 = w2 - config.lr * g2
        cand = RefinerWeights(w1=w1.copy(), w2=w2.copy())
        loss = full_loss(cand)
        epoch_losses.append(loss)
        if loss < best_loss:
            best_w, best_loss = cand, loss

    return TrainResult(weights=best_w, initial_loss=initial,
                       final_loss=best_loss, epoch_losses=epoch_losses)


def rerank_kb(index: DenseIndex, working_ids: Sequence[str], e_new,
              n: int) -> list[tuple[str, float]]:
    """Single rerank pass: score the working set with the refined query."""
    if not working_ids:
        raise EmptyCorpusError("cannot rerank an empty working set")
    return dense_top_k(index, e_new, n, restrict=working_ids)


def parse_grade(reply: str) -> int:
    """Extract a 0-4 relevance grade; unparseable replies grade 0."""
    m = _INT_RE.search(reply)
    if m is None:
        logger.warning("relevance reply %r has no integer; grading 0", reply[:80])
        return 0
    value = int(m.group())
    if value < 0 or value > 4:
        clamped = min(max(value, 0), 4)
        logger.warning("relevance grade %d outside 0-4; clamping to %d", value, clamped)
        return clamped
    return value


def prompt_rerank(backend: Backend, query: str, passages: Sequence[Passage],
                  max_tokens: int = 8) -> list[tuple[Passage, int]]:
    """Grade each passage with one generation call; sort by grade.

    Returns (passage, grade) pairs in descending grade order; ties keep the
    incoming order.  Costs exactly one generation call per passage.
    """
    graded = []
    for p in passages:
        prompt = RELEVANCE_PROMPT_TEMPLATE.format(query=query, document=p.text)
        trace = backend.generate(GenerationRequest(prompt=prompt,
                                                   max_tokens=max_tokens))
        graded.append((p, parse_grade(trace.text)))
    order = sorted(range(len(graded)), key=lambda i: (-graded[i][1], i))
    return [graded[i] for i in order]


def save_refiner(weights: RefinerWeights, path: str | Path) -> None:
    """Store both matrices as rows in the common vector-store layout."""
    ids = [f"w1/{i}" for i in range(weights.dim)] + \
          [f"w2/{i}" for i in range(weights.dim)]
    save_vector_store(path, ids, np.vstack([weights.w1, weights.w2]),
                      magic=_WEIGHTS_MAGIC)


def load_refiner(path: str | Path) -> RefinerWeights:
    ids, mat = load_vector_store(path, magic=_WEIGHTS_MAGIC)
    if mat.shape[0] % 2 != 0 or mat.shape[0] != 2 * mat.shape[1]:
        raise FormatError(f"refiner store has inconsistent shape {mat.shape}")
    d = mat.shape[1]
    expected = [f"w1/{i}" for i in range(d)] + [f"w2/{i}" for i in range(d)]
    if ids != expected:
        raise FormatError("refiner store has an unexpected row id table")
    return RefinerWeights(w1=mat[:d], w2=mat[d:])
