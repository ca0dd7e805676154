"""Scripted backend: canned replies and logprobs for hermetic tests.

Replies are keyed by prompt.  An entry matches by exact SHA-256 digest, exact
prompt string, or substring containment; the first applicable entry in file
order wins, with a hash or exact match taking priority over containment.
Entries may carry several replies, consumed in order (the last one repeats),
which makes retry behavior scriptable.

Embeddings and probe hidden states are synthesized deterministically from
hashes unless the script cans them explicitly, so a script file only needs to
pin what the test actually asserts about.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import BackendError, FormatError
from . import Backend, GenerationRequest, GenerationTrace, TokenLogprobs, Usage


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def _hash_to_seed(*parts: str) -> list[int]:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 8], "big") for i in range(0, 32, 8)]


@dataclass
class _Reply:
    text: str
    tokens: list[TokenLogprobs]
    injected_hidden: np.ndarray | None = None
    wall_time_ms: float = 0.0


@dataclass
class _Entry:
    match_kind: str  # "sha256" | "prompt" | "contains"
    match_value: str
    replies: list[_Reply]
    served: int = 0


def _synth_tokens(text: str) -> list[TokenLogprobs]:
    """Whitespace pieces, each certain (logprob 0), concatenating to text."""
    words = text.split()
    pieces = []
    for i, w in enumerate(words):
        piece = w if i == 0 else " " + w
        pieces.append(TokenLogprobs(token=piece, logprobs={piece: 0.0}))
    return pieces


def _parse_reply(obj: dict) -> _Reply:
    if "text" not in obj or not isinstance(obj["text"], str):
        raise FormatError("scripted reply needs a string 'text' field")
    text = obj["text"]
    if "tokens" in obj:
        tokens = [TokenLogprobs(token=t["token"],
                                logprobs={k: float(v) for k, v in t["logprobs"].items()})
                  for t in obj["tokens"]]
        joined = "".join(t.token for t in tokens)
        if joined != text:
            raise FormatError(
                f"scripted tokens concatenate to {joined!r}, not the reply text {text!r}")
    else:
        tokens = _synth_tokens(text)
    hidden = None
    if obj.get("injected_hidden") is not None:
        hidden = np.asarray(obj["injected_hidden"], dtype=np.float64)
    return _Reply(text=text, tokens=tokens, injected_hidden=hidden,
                  wall_time_ms=float(obj.get("wall_time_ms", 0.0)))


class ScriptedBackend(Backend):
    def __init__(self, entries: list[dict] | None = None, *, dim: int = 32,
                 hidden_dim: int = 32, seed: int = 0,
                 default: dict | None = None,
                 embeddings: dict[str, list[float]] | None = None):
        self.dim = dim
        self.hidden_dim = hidden_dim
        self.seed = seed
        self._lock = threading.Lock()
        self._entries: list[_Entry] = []
        self._canned_embeddings = {k: np.asarray(v, dtype=np.float64)
                                   for k, v in (embeddings or {}).items()}
        self._default = _parse_reply(default) if default else None
        rng = np.random.default_rng([seed, 0x5C819])
        self._probe_proj = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(hidden_dim, dim))
        for e in entries or []:
            match = e.get("match", {})
            kinds = [k for k in ("sha256", "prompt", "contains") if k in match]
            if len(kinds) != 1:
                raise FormatError(
                    "scripted entry match must have exactly one of sha256/prompt/contains")
            kind = kinds[0]
            if "replies" in e:
                replies = [_parse_reply(r) for r in e["replies"]]
            elif "reply" in e:
                replies = [_parse_reply(e["reply"])]
            else:
                raise FormatError("scripted entry needs 'reply' or 'replies'")
            if not replies:
                raise FormatError("scripted entry has an empty reply list")
            self._entries.append(_Entry(match_kind=kind, match_value=match[kind],
                                        replies=replies))

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
        if not isinstance(spec, dict):
            raise FormatError("script file must hold a JSON object")
        return cls(entries=spec.get("entries", []),
                   dim=int(spec.get("dim", 32)),
                   hidden_dim=int(spec.get("hidden_dim", 32)),
                   seed=int(spec.get("seed", 0)),
                   default=spec.get("default"),
                   embeddings=spec.get("embeddings"))

    # -- matching -----------------------------------------------------------

    def _lookup(self, prompt: str) -> _Reply:
        digest = prompt_sha256(prompt)
        with self._lock:
            for entry in self._entries:
                if entry.match_kind == "sha256" and entry.match_value == digest:
                    return self._serve(entry)
                if entry.match_kind == "prompt" and entry.match_value == prompt:
                    return self._serve(entry)
            for entry in self._entries:
                if entry.match_kind == "contains" and entry.match_value in prompt:
                    return self._serve(entry)
        if self._default is not None:
            return self._default
        raise BackendError(
            f"no scripted reply matches prompt (sha256 {digest[:12]}…): {prompt[:80]!r}")

    @staticmethod
    def _serve(entry: _Entry) -> _Reply:
        idx = min(entry.served, len(entry.replies) - 1)
        entry.served += 1
        return entry.replies[idx]

    # -- backend contract -----------------------------------------------------

    def _word_vector(self, word: str) -> np.ndarray:
        rng = np.random.default_rng(_hash_to_seed("embed", str(self.seed), word))
        return rng.normal(0.0, 1.0, size=self.dim)

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        """Mean of per-word hash vectors; canned texts override.

        Bag-of-words composition mirrors the toy backend, so synthetic
        corpora keep their planted dense-space structure under this backend
        too.  Empty text embeds to zeros.
        """
        out = []
        for text in texts:
            canned = self._canned_embeddings.get(text)
            if canned is not None:
                out.append(canned.copy())
                continue
            words = text.split()
            if not words:
                out.append(np.zeros(self.dim))
                continue
            out.append(np.mean([self._word_vector(w) for w in words], axis=0))
        return out

    def generate(self, request: GenerationRequest) -> GenerationTrace:
        reply = self._lookup(request.prompt)
        hidden = None
        if request.return_hidden and request.inject_embedding is not None:
            if reply.injected_hidden is not None:
                hidden = reply.injected_hidden.copy()
            else:
                vec = np.asarray(request.inject_embedding, dtype=np.float64)
                if vec.shape != (self.dim,):
                    raise BackendError(
                        f"injected embedding has shape {vec.shape}, expected ({self.dim},)")
                hidden = self._probe_proj @ vec
        return GenerationTrace(
            text=reply.text,
            tokens=[TokenLogprobs(token=t.token, logprobs=dict(t.logprobs))
                    for t in reply.tokens],
            injected_hidden=hidden,
            usage=Usage(output_tokens=len(reply.tokens),
                        wall_time_ms=reply.wall_time_ms),
        )

    def info(self) -> dict:
        return {"model": "scripted", "input_dim": self.dim,
                "hidden_dim": self.hidden_dim, "vocab": 0}
