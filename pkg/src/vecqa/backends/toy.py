"""Deterministic miniature decoder-only transformer.

A stand-in language model small enough to run in tests: fixed seeded weights,
greedy temperature-0 decoding, bitwise-reproducible outputs.  It exists so the
whole answering pipeline can be exercised hermetically; it does not produce
meaningful language.

Tokenization is whitespace splitting after lowercasing.  Tokens with a row in
the vocabulary use it; anything else is hash-bucketed onto a row, so arbitrary
text still embeds deterministically.  Emitted tokens are always canonical
vocabulary words.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass

import numpy as np

from ..errors import BackendError, ContextOverflowError, DimMismatchError
from . import Backend, GenerationRequest, GenerationTrace, TokenLogprobs, Usage


def _default_vocab(size: int = 500) -> list[str]:
    consonants = "bdfgklmnprstvz"
    vowels = "aeiou"
    syllables = [c + v for c in consonants for v in vowels]
    words = ["".join(pair) for pair in itertools.product(syllables, syllables)]
    return words[:size]


DEFAULT_VOCAB = _default_vocab()


def _stable_bucket(token: str, n: int) -> int:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % n


@dataclass
class _Block:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w_up: np.ndarray
    b_up: np.ndarray
    w_down: np.ndarray
    b_down: np.ndarray


class ToyBackend(Backend):
    """Two-layer causal transformer with tied input/output embeddings.

    The layer feeding the final block is the penultimate layer; its
    per-position activations are what hidden-state probes return.
    """

    def __init__(self, vocab: list[str] | None = None, dim: int = 32,
                 n_layers: int = 2, n_heads: int = 4, max_len: int = 1024,
                 seed: int = 0):
        if vocab is None:
            vocab = DEFAULT_VOCAB
        if len(vocab) > 512:
            raise ValueError("toy vocabulary is capped at 512 tokens")
        if len(set(vocab)) != len(vocab):
            raise ValueError("toy vocabulary has duplicate tokens")
        if dim % n_heads != 0:
            raise ValueError("dim must be divisible by n_heads")
        if n_layers < 2:
            raise ValueError("need at least 2 layers to expose a penultimate layer")
        self.vocab = list(vocab)
        self.dim = dim
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.max_len = max_len
        self.seed = seed
        self._tok_index = {t: i for i, t in enumerate(self.vocab)}

        rng = np.random.default_rng(seed)
        v = len(self.vocab)
        self.emb = rng.normal(0.0, 0.4, size=(v, dim))
        self.pos = rng.normal(0.0, 0.1, size=(max_len, dim))
        self.blocks: list[_Block] = []
        for _ in range(n_layers):
            s = 1.0 / np.sqrt(dim)
            self.blocks.append(_Block(
                wq=rng.normal(0.0, s, size=(dim, dim)),
                wk=rng.normal(0.0, s, size=(dim, dim)),
                wv=rng.normal(0.0, s, size=(dim, dim)),
                wo=rng.normal(0.0, s, size=(dim, dim)),
                w_up=rng.normal(0.0, s, size=(dim, 4 * dim)),
                b_up=np.zeros(4 * dim),
                w_down=rng.normal(0.0, 1.0 / np.sqrt(4 * dim), size=(4 * dim, dim)),
                b_down=np.zeros(dim),
            ))

    # -- tokenization -----------------------------------------------------

    def tokenize(self, text: str) -> list[str]:
        return text.lower().split()

    def token_id(self, token: str) -> int:
        idx = self._tok_index.get(token)
        if idx is not None:
            return idx
        return _stable_bucket(token, len(self.vocab))

    def embedding_row(self, token: str) -> np.ndarray:
        """The input embedding a token would receive: injection oracle."""
        return self.emb[self.token_id(token)].copy()

    # -- model ------------------------------------------------------------

    @staticmethod
    def _layernorm(x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        return (x - mu) / np.sqrt(var + 1e-5)

    def _attention(self, x: np.ndarray, blk: _Block) -> np.ndarray:
        t, d = x.shape
        hd = d // self.n_heads
        q = (x @ blk.wq).reshape(t, self.n_heads, hd).transpose(1, 0, 2)
        k = (x @ blk.wk).reshape(t, self.n_heads, hd).transpose(1, 0, 2)
        v = (x @ blk.wv).reshape(t, self.n_heads, hd).transpose(1, 0, 2)
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(hd)
        mask = np.triu(np.ones((t, t), dtype=bool), k=1)
        scores = np.where(mask, -np.inf, scores)
        scores = scores - scores.max(axis=-1, keepdims=True)
        weights = np.exp(scores)
        weights = weights / weights.sum(axis=-1, keepdims=True)
        out = (weights @ v).transpose(1, 0, 2).reshape(t, d)
        return out @ blk.wo

    def _forward(self, embs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Run the stack; return (penultimate-layer hidden, final logits)."""
        t = embs.shape[0]
        x = embs + self.pos[:t]
        penultimate = x
        for i, blk in enumerate(self.blocks):
            x = x + self._attention(self._layernorm(x), blk)
            h = np.tanh(self._layernorm(x) @ blk.w_up + blk.b_up)
            x = x + h @ blk.w_down + blk.b_down
            if i == self.n_layers - 2:
                penultimate = x.copy()
        logits = self._layernorm(x) @ self.emb.T
        return penultimate, logits

    # -- backend contract ---------------------------------------------------

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            ids = [self.token_id(t) for t in self.tokenize(text)]
            if ids:
                out.append(self.emb[ids].mean(axis=0).copy())
            else:
                out.append(np.zeros(self.dim))
        return out

    def generate(self, request: GenerationRequest) -> GenerationTrace:
        if request.temperature != 0.0:
            raise BackendError("toy backend decodes greedily; temperature must be 0")
        prompt_tokens = self.tokenize(request.prompt)
        rows = [self.emb[self.token_id(t)] for t in prompt_tokens]
        injected_at: int | None = None
        if request.inject_embedding is not None:
            vec = np.asarray(request.inject_embedding, dtype=np.float64)
            if vec.shape != (self.dim,):
                raise DimMismatchError(
                    f"injected embedding has shape {vec.shape}, expected ({self.dim},)")
            injected_at = len(rows)
            rows.append(vec)
        if not rows:
            raise BackendError("cannot generate from an empty prompt")
        if len(rows) + request.max_tokens > self.max_len:
            raise ContextOverflowError(
                f"{len(rows)} input positions + {request.max_tokens} requested tokens "
                f"exceed the {self.max_len}-position context")

        embs = np.vstack(rows)
        injected_hidden: np.ndarray | None = None
        emitted: list[TokenLogprobs] = []
        words: list[str] = []
        for step in range(request.max_tokens):
            penult, logits = self._forward(embs)
            if step == 0 and injected_at is not None and request.return_hidden:
                injected_hidden = penult[injected_at].copy()
            logp = self._log_softmax(logits[-1])
            choice = int(np.argmax(logp))
            word = self.vocab[choice]
            top = self._top_logprobs(logp, request.top_logprobs)
            piece = word if not words else " " + word
            emitted.append(TokenLogprobs(token=piece, logprobs=top))
            words.append(word)
            embs = np.vstack([embs, self.emb[choice]])

        return GenerationTrace(
            text=" ".join(words),
            tokens=emitted,
            injected_hidden=injected_hidden,
            usage=Usage(output_tokens=len(emitted), wall_time_ms=0.0),
        )

    def info(self) -> dict:
        return {
            "model": f"toy-{self.n_layers}l-{self.dim}d-seed{self.seed}",
            "input_dim": self.dim,
            "hidden_dim": self.dim,
            "vocab": len(self.vocab),
        }

    # -- helpers ------------------------------------------------------------

    @staticmethod
    def _log_softmax(logits: np.ndarray) -> np.ndarray:
        shifted = logits - logits.max()
        return shifted - np.log(np.exp(shifted).sum())

    def _top_logprobs(self, logp: np.ndarray, k: int) -> dict[str, float]:
        k = min(k, len(self.vocab))
        order = sorted(range(len(self.vocab)),
                       key=lambda i: (-logp[i], self.vocab[i]))[:k]
        return {self.vocab[i]: float(logp[i]) for i in order}
