"""Passage corpus loading, tokenization, and answer normalization.

The same tokenizer feeds both the lexical index and the token-level answer
metrics so the two never drift apart.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DuplicateIdError, FormatError

# Alphanumeric runs; underscore is word-ish in regex land but not alphanumeric.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)
_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)

_REQUIRED_FIELDS = ("id", "title", "text")


@dataclass(frozen=True)
class Passage:
    """One retrievable unit: an id, a title, and a body of text."""

    id: str
    title: str
    text: str


class Corpus:
    """Ordered passage collection with constant-time id lookup."""

    def __init__(self, passages: Iterable[Passage]):
        self._passages: list[Passage] = []
        self._by_id: dict[str, Passage] = {}
        for p in passages:
            if p.id in self._by_id:
                raise DuplicateIdError(f"duplicate passage id {p.id!r}")
            if not p.text.strip():
                raise FormatError(f"passage {p.id!r} has empty text")
            self._passages.append(p)
            self._by_id[p.id] = p

    def __len__(self) -> int:
        return len(self._passages)

    def __iter__(self) -> Iterator[Passage]:
        return iter(self._passages)

    def __contains__(self, pid: str) -> bool:
        return pid in self._by_id

    def __getitem__(self, pid: str) -> Passage:
        try:
            return self._by_id[pid]
        except KeyError:
            raise KeyError(f"unknown passage id {pid!r}") from None

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self._passages]

    def get(self, pid: str) -> Passage | None:
        return self._by_id.get(pid)


def load_corpus(path: str | Path) -> Corpus:
    """Read a line-delimited JSON corpus.

    Each non-blank line must be an object with exactly the fields
    ``id``, ``title``, ``text`` (all strings, text non-empty after trimming).
    Errors name the offending 1-based line number.
    """
    passages: list[Passage] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise FormatError(f"line {lineno}: record is not an object")
            missing = [f for f in _REQUIRED_FIELDS if f not in rec]
            if missing:
                raise FormatError(f"line {lineno}: missing field {missing[0]!r}")
            extra = sorted(set(rec) - set(_REQUIRED_FIELDS))
            if extra:
                raise FormatError(f"line {lineno}: unknown field {extra[0]!r}")
            for f in _REQUIRED_FIELDS:
                if not isinstance(rec[f], str):
                    raise FormatError(f"line {lineno}: field {f!r} is not a string")
            if not rec["text"].strip():
                raise FormatError(f"line {lineno}: empty text")
            if rec["id"] in seen:
                raise DuplicateIdError(f"line {lineno}: duplicate passage id {rec['id']!r}")
            seen.add(rec["id"])
            passages.append(Passage(id=rec["id"], title=rec["title"], text=rec["text"]))
    return Corpus(passages)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the corpus back out, one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in corpus:
            fh.write(json.dumps({"id": p.id, "title": p.title, "text": p.text},
                                ensure_ascii=False))
            fh.write("\n")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs, dropping empties."""
    return _TOKEN_RE.findall(text.lower())


def normalize_answer(text: str) -> str:
    """Canonical short-answer form: lowercase, no punctuation, no articles,
    single-spaced.  Idempotent."""
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCT)
    text = _ARTICLE_RE.sub(" ", text)
    return " ".join(text.split())
