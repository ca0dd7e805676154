"""BM25 lexical index over passage title + text.

Scoring uses the plain Okapi form with a smoothed, always-positive idf:

    idf(t)      = ln(1 + (N - df + 0.5) / (df + 0.5))
    score(q, d) = sum_t idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len/avglen))

Defaults k1 = 1.2, b = 0.75.  Zero-overlap queries return an empty result
rather than an arbitrary slice of the corpus.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus, tokenize
from .errors import EmptyCorpusError, FormatError, NotFoundError

_MAGIC = b"VQLEXIDX"
_VERSION = 1


@dataclass
class LexicalIndex:
    """Postings plus the document statistics BM25 needs."""

    postings: dict[str, dict[str, int]]  # term -> {passage id -> term frequency}
    doc_len: dict[str, int]              # passage id -> token count
    avgdl: float
    k1: float = 1.2
    b: float = 0.75

    @property
    def doc_count(self) -> int:
        return len(self.doc_len)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        n = self.doc_count
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))


def build_lexical(corpus: Corpus, k1: float = 1.2, b: float = 0.75) -> LexicalIndex:
    """Index tokenize(title + " " + text) for every passage."""
    if len(corpus) == 0:
        raise EmptyCorpusError("cannot build a lexical index over an empty corpus")
    postings: dict[str, dict[str, int]] = {}
    doc_len: dict[str, int] = {}
    for p in corpus:
        toks = tokenize(p.title + " " + p.text)
        doc_len[p.id] = len(toks)
        for t in toks:
            postings.setdefault(t, {})
            postings[t][p.id] = postings[t].get(p.id, 0) + 1
    avgdl = sum(doc_len.values()) / len(doc_len)
    return LexicalIndex(postings=postings, doc_len=doc_len, avgdl=avgdl, k1=k1, b=b)


def bm25_score(index: LexicalIndex, query_tokens: list[str], passage_id: str) -> float:
    """BM25 score of one passage against pre-tokenized query terms.

    Repeated query terms contribute once per occurrence, matching the
    summation over query positions.
    """
    if passage_id not in index.doc_len:
        raise NotFoundError(f"unknown passage id {passage_id!r}")
    dl = index.doc_len[passage_id]
    norm = index.k1 * (1.0 - index.b + index.b * dl / index.avgdl)
    score = 0.0
    for t in query_tokens:
        tf = index.postings.get(t, {}).get(passage_id, 0)
        if tf == 0:
            continue
        score += index.idf(t) * tf * (index.k1 + 1.0) / (tf + norm)
    return score


def lexical_top_k(index: LexicalIndex, query: str, k: int) -> list[tuple[str, float]]:
    """Top-k passages by BM25, descending score, ties by ascending id.

    Only passages sharing at least one term with the query appear; a
    zero-overlap query yields an empty list.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    qtoks = tokenize(query)
    matched: set[str] = set()
    for t in set(qtoks):
        matched.update(index.postings.get(t, ()))
    scored = [(pid, bm25_score(index, qtoks, pid)) for pid in matched]
    scored = [(pid, s) for pid, s in scored if s > 0.0]
    scored.sort(key=lambda ps: (-ps[1], ps[0]))
    return scored[:k]


def save_lexical(index: LexicalIndex, path: str | Path) -> None:
    """Binary store: 8-byte magic, version byte, stats, doc table, postings.

    All integers little-endian; strings are u16 length + UTF-8 bytes.
    Layout after the header:

        k1: f64, b: f64, avgdl: f64, doc_count: u32
        per doc (corpus order):   id: str, doc_len: u32
        term_count: u32
        per term (sorted):        term: str, posting_count: u32,
                                  then (doc_index: u32, tf: u32) pairs
    """
    doc_ids = list(index.doc_len)
    doc_pos = {pid: i for i, pid in enumerate(doc_ids)}
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<B", _VERSION))
        fh.write(struct.pack("<dddI", index.k1, index.b, index.avgdl, len(doc_ids)))
        for pid in doc_ids:
            _write_str(fh, pid)
            fh.write(struct.pack("<I", index.doc_len[pid]))
        terms = sorted(index.postings)
        fh.write(struct.pack("<I", len(terms)))
        for t in terms:
            _write_str(fh, t)
            plist = index.postings[t]
            fh.write(struct.pack("<I", len(plist)))
            for pid, tf in sorted(plist.items(), key=lambda kv: doc_pos[kv[0]]):
                fh.write(struct.pack("<II", doc_pos[pid], tf))


def load_lexical(path: str | Path) -> LexicalIndex:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise FormatError(f"not a lexical index file: bad magic {magic!r}")
        (version,) = struct.unpack("<B", _read_exact(fh, 1))
        if version != _VERSION:
            raise FormatError(f"unsupported lexical index version {version}")
        k1, b, avgdl, doc_count = struct.unpack("<dddI", _read_exact(fh, 28))
        doc_ids: list[str] = []
        doc_len: dict[str, int] = {}
        for _ in range(doc_count):
            pid = _read_str(fh)
            (dl,) = struct.unpack("<I", _read_exact(fh, 4))
            doc_ids.append(pid)
            doc_len[pid] = dl
        (term_count,) = struct.unpack("<I", _read_exact(fh, 4))
        postings: dict[str, dict[str, int]] = {}
        for _ in range(term_count):
            term = _read_str(fh)
            (n,) = struct.unpack("<I", _read_exact(fh, 4))
            plist: dict[str, int] = {}
            for _ in range(n):
                di, tf = struct.unpack("<II", _read_exact(fh, 8))
                plist[doc_ids[di]] = tf
            postings[term] = plist
    return LexicalIndex(postings=postings, doc_len=doc_len, avgdl=avgdl, k1=k1, b=b)


def _write_str(fh, s: str) -> None:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FormatError(f"string too long to store ({len(raw)} bytes)")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<H", _read_exact(fh, 2))
    return _read_exact(fh, n).decode("utf-8")


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise FormatError("truncated index file")
    return raw
