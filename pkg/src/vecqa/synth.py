"""Synthetic corpora and scripted replies for hermetic experiments.

Passages are built from the toy backend's vocabulary so every word owns a
distinct embedding row.  Each question plants a topic word shared by its gold
and decoy passages; decoys repeat the topic several times but never contain
the answer, so term-frequency retrieval ranks them above the golds and a
reranker has something real to fix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import log
from pathlib import Path

import numpy as np

from .backends.toy import DEFAULT_VOCAB
from .corpus import Corpus, Passage


@dataclass
class SynthQuestion:
    qid: str
    question: str
    golds: list[str]
    answer_word: str
    distractor_word: str  # a vocabulary word no passage contains
    topic_word: str = ""


@dataclass
class SynthFixture:
    corpus: Corpus
    questions: list[SynthQuestion]
    config: dict = field(default_factory=dict)


def make_planted_corpus(n_questions: int = 25,
                        golds_per_question: int = 3,
                        decoys_per_question: int = 8,
                        passage_len: int = 12,
                        decoy_topic_repeats: int = 6,
                        total_passages: int = 500,
                        seed: int = 0,
                        vocab: list[str] | None = None) -> SynthFixture:
    """Plant gold and decoy passages for each question inside filler.

    Per question: ``golds_per_question`` passages containing the topic once
    and the answer once, and ``decoys_per_question`` passages repeating the
    topic ``decoy_topic_repeats`` times with no answer.  Question words other
    than the topic are reserved words appearing in no passage, so term
    retrieval sees only the planted group.  Filler passages of noise words pad
    the corpus to ``total_passages``.
    """
    vocab = list(DEFAULT_VOCAB if vocab is None else vocab)
    per_q = 3  # topic, answer, distractor
    reserved = 2  # question-only words
    need = n_questions * per_q + reserved
    if need + 50 > len(vocab):
        raise ValueError(f"vocabulary too small: need {need}+noise, have {len(vocab)}")
    planted = n_questions * (golds_per_question + decoys_per_question)
    if planted > total_passages:
        raise ValueError(f"{planted} planted passages exceed total {total_passages}")

    rng = np.random.default_rng(seed)
    shuffled = list(vocab)
    rng.shuffle(shuffled)
    ask_a, ask_b = shuffled[0], shuffled[1]
    noise_pool = shuffled[need:]

    def noise(k: int) -> list[str]:
        return [noise_pool[i] for i in rng.integers(0, len(noise_pool), size=k)]

    passages: list[Passage] = []
    questions: list[SynthQuestion] = []
    pid = 0
    for qi in range(n_questions):
        base = reserved + qi * per_q
        topic, answer, distractor = shuffled[base:base + 3]
        questions.append(SynthQuestion(
            qid=f"q{qi:03d}",
            question=f"{ask_a} {topic} {ask_b}",
            golds=[answer],
            answer_word=answer,
            distractor_word=distractor,
            topic_word=topic,
        ))
        for g in range(golds_per_question):
            words = [topic, answer] + noise(passage_len - 2)
            rng.shuffle(words)
            passages.append(Passage(id=f"p{pid:04d}", title="",
                                    text=" ".join(words)))
            pid += 1
        for d in range(decoys_per_question):
            words = [topic] * decoy_topic_repeats + noise(passage_len - decoy_topic_repeats)
            rng.shuffle(words)
            passages.append(Passage(id=f"p{pid:04d}", title="",
                                    text=" ".join(words)))
            pid += 1
    while pid < total_passages:
        passages.append(Passage(id=f"p{pid:04d}", title="",
                                text=" ".join(noise(passage_len))))
        pid += 1

    return SynthFixture(corpus=Corpus(passages), questions=questions)


def make_script(questions: list[SynthQuestion], *, dim: int = 32,
                hidden_dim: int = 32, seed: int = 0,
                flip_every: int = 2) -> dict:
    """Scripted replies answering each question with its gold plus a filler.

    The gold candidate's token is emitted with certainty (entropy zero) while
    the filler candidate gets a spread distribution, so entropy selection must
    pick the gold.  Every ``flip_every``-th question lists the filler first,
    exercising selection at both candidate positions.
    """
    third = log(1.0 / 3.0)
    entries = []
    for i, q in enumerate(questions):
        wrong = f"not{q.answer_word}"
        gold_first = flip_every < 1 or (i % flip_every != flip_every - 1)
        first, second = (q.answer_word, wrong) if gold_first else (wrong, q.answer_word)
        text = f"(a) {first}, (b) {second}"

        def certain(piece: str) -> dict:
            return {"token": piece, "logprobs": {piece: 0.0}}

        def spread(piece: str) -> dict:
            return {"token": piece,
                    "logprobs": {piece: third, piece + "x": third, piece + "y": third}}

        tokens = [
            certain("(a) "),
            certain(first) if gold_first else spread(first),
            certain(", (b) "),
            spread(second) if gold_first else certain(second),
        ]
        entries.append({
            "match": {"contains": f"Question: {q.question}\n"},
            "reply": {"text": text, "tokens": tokens},
        })
    return {"dim": dim, "hidden_dim": hidden_dim, "seed": seed, "entries": entries}


def write_fixture(fixture: SynthFixture, out_dir: str | Path,
                  script: dict | None = None,
                  config_lines: list[str] | None = None) -> dict[str, Path]:
    """Write corpus, questions, golds, optional script and config files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    paths["corpus"] = out / "corpus.jsonl"
    with open(paths["corpus"], "w", encoding="utf-8") as fh:
        for p in fixture.corpus:
            fh.write(json.dumps({"id": p.id, "title": p.title, "text": p.text},
                                ensure_ascii=False) + "\n")

    paths["questions"] = out / "questions.jsonl"
    with open(paths["questions"], "w", encoding="utf-8") as fh:
        for q in fixture.questions:
            fh.write(json.dumps({"qid": q.qid, "question": q.question,
                                 "golds": q.golds}, ensure_ascii=False) + "\n")

    if script is not None:
        paths["script"] = out / "script.json"
        with open(paths["script"], "w", encoding="utf-8") as fh:
            json.dump(script, fh, ensure_ascii=False, indent=1)

    if config_lines is not None:
        paths["config"] = out / "run.conf"
        with open(paths["config"], "w", encoding="utf-8") as fh:
            fh.write("\n".join(config_lines) + "\n")

    return paths
