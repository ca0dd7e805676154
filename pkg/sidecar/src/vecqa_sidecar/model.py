"""Model loading and greedy decoding.

Two loading paths: ``builtin[:seed]`` constructs a small seeded GPT-2-style
network with a word-level tokenizer so the server runs hermetically with no
downloads, and any other identifier is handed to the ``transformers`` auto
classes (typically a local checkpoint directory).

Decoding is greedy and cache-free: every step re-runs the full prefix.  That
keeps the injected-embedding path and the plain-text path numerically
identical, because both reduce to the same ``inputs_embeds`` tensor.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch


class GenerationError(ValueError):
    """A request the server must refuse, with a machine-readable reason."""

    def __init__(self, message: str, reason: str):
        super().__init__(message)
        self.reason = reason


_BUILTIN_WORDS = (
    "the and was for are with his they this have from one had word but not "
    "what all were when your can said there use each which she how their "
    "will other about out many then them these some her would make like "
    "him into time has look two more write go see number way could people "
    "than first water been call who its now find long down day did get come"
).split()


class WordTokenizer:
    """Whitespace word tokenizer; unknown words hash onto a vocabulary row."""

    def __init__(self, words: Sequence[str]):
        if len(set(words)) != len(words):
            raise ValueError("vocabulary has duplicate tokens")
        self.words = list(words)
        self._index = {w: i for i, w in enumerate(self.words)}

    @property
    def vocab_size(self) -> int:
        return len(self.words)

    def encode(self, text: str) -> list[int]:
        return [self.token_id(w) for w in text.lower().split()]

    def token_id(self, token: str) -> int:
        idx = self._index.get(token.lower())
        if idx is not None:
            return idx
        digest = hashlib.sha256(token.lower().encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % len(self.words)

    def key(self, token_id: int) -> str:
        return self.words[token_id]

    def piece(self, token_id: int, first: bool) -> str:
        word = self.words[token_id]
        return word if first else " " + word


class HubTokenizer:
    """Adapter over a ``transformers`` tokenizer.

    The injected position always sits after every special token the
    tokenizer prepends, because injection appends past the encoded prompt.
    """

    def __init__(self, tokenizer):
        self._tok = tokenizer

    @property
    def vocab_size(self) -> int:
        return len(self._tok)

    def encode(self, text: str) -> list[int]:
        if not text:
            return []
        return list(self._tok(text, add_special_tokens=True)["input_ids"])

    def token_id(self, token: str) -> int:
        ids = self._tok(token, add_special_tokens=False)["input_ids"]
        if len(ids) != 1:
            raise GenerationError(
                f"{token!r} does not map to a single token id", "bad_argument")
        return int(ids[0])

    def key(self, token_id: int) -> str:
        return self._tok.convert_ids_to_tokens(token_id)

    def piece(self, token_id: int, first: bool) -> str:
        return self._tok.decode([token_id])


@dataclass
class ModelBundle:
    """A loaded model plus the tokenizer that feeds it."""

    name: str
    tokenizer: WordTokenizer | HubTokenizer
    model: torch.nn.Module
    device: str = "cpu"

    @property
    def _wte(self) -> torch.nn.Module:
        return self.model.get_input_embeddings()

    @property
    def input_dim(self) -> int:
        return int(self._wte.weight.shape[1])

    @property
    def hidden_dim(self) -> int:
        return int(getattr(self.model.config, "hidden_size", self.input_dim))

    @property
    def vocab_rows(self) -> int:
        return int(self._wte.weight.shape[0])

    @property
    def n_positions(self) -> int:
        return int(getattr(self.model.config, "max_position_embeddings", 1 << 30))

    def embedding_row(self, token: str) -> np.ndarray:
        """The input embedding a token would receive: injection oracle."""
        token_id = self.tokenizer.token_id(token)
        # indexing a parameter yields a grad-tracking view; detach it
        row = self._wte.weight[token_id].detach()
        return row.to(torch.float64).cpu().numpy().copy()


def _build_tiny(seed: int, device: str) -> ModelBundle:
    from transformers import GPT2Config, GPT2LMHeadModel

    tokenizer = WordTokenizer(_BUILTIN_WORDS)
    cfg = GPT2Config(vocab_size=tokenizer.vocab_size, n_positions=256,
                     n_embd=32, n_layer=2, n_head=4,
                     bos_token_id=0, eos_token_id=0,
                     resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = GPT2LMHeadModel(cfg)
    model.to(device).eval()
    return ModelBundle(name=f"builtin-2l-32d-seed{seed}", tokenizer=tokenizer,
                       model=model, device=device)


def load_model(spec: str | None = None, device: str = "cpu") -> ModelBundle:
    """Load ``builtin[:seed]`` or any transformers checkpoint identifier."""
    spec = spec or "builtin:0"
    if spec == "builtin" or spec.startswith("builtin:"):
        seed = int(spec.split(":", 1)[1]) if ":" in spec else 0
        return _build_tiny(seed, device)
    from transformers import AutoModelForCausalLM, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(spec)
    model = AutoModelForCausalLM.from_pretrained(spec).to(device).eval()
    return ModelBundle(name=spec, tokenizer=HubTokenizer(tokenizer),
                       model=model, device=device)


@dataclass
class GreedyResult:
    text: str
    tokens: list[tuple[str, dict[str, float]]]
    injected_hidden: np.ndarray | None


@torch.no_grad()
def generate_greedy(bundle: ModelBundle, prompt: str, max_tokens: int,
                    inject: np.ndarray | None = None,
                    return_hidden: bool = False,
                    top_logprobs: int = 20) -> GreedyResult:
    """Greedy decoding with an optional injected final input position.

    The injected vector becomes one extra input-position embedding appended
    after the encoded prompt.  When ``return_hidden`` is set alongside an
    injection, the penultimate layer's activation at that position is
    captured from the first forward pass; capture is local to this call, so
    concurrent requests cannot interleave.
    """
    if max_tokens < 1:
        raise GenerationError("max_tokens must be at least 1", "bad_argument")
    if top_logprobs < 1:
        raise GenerationError("top_logprobs must be at least 1", "bad_argument")
    tok = bundle.tokenizer
    wte = bundle.model.get_input_embeddings()
    ids = tok.encode(prompt)
    rows = wte(torch.tensor(ids, dtype=torch.long, device=bundle.device))

    inject_at: int | None = None
    if inject is not None:
        vec = torch.as_tensor(np.asarray(inject, dtype=np.float64),
                              dtype=rows.dtype, device=bundle.device)
        if vec.shape != (bundle.input_dim,):
            raise GenerationError(
                f"injected embedding has {tuple(vec.shape)} entries, "
                f"expected ({bundle.input_dim},)", "dim_mismatch")
        inject_at = rows.shape[0]
        rows = torch.cat([rows, vec.unsqueeze(0)], dim=0)
    if rows.shape[0] == 0:
        raise GenerationError("cannot generate from an empty prompt",
                              "empty_prompt")
    if rows.shape[0] + max_tokens > bundle.n_positions:
        raise GenerationError(
            f"{rows.shape[0]} input positions + {max_tokens} requested tokens "
            f"exceed the {bundle.n_positions}-position context",
            "context_overflow")

    k = min(top_logprobs, tok.vocab_size)
    embs = rows.unsqueeze(0)
    injected_hidden: np.ndarray | None = None
    emitted: list[tuple[str, dict[str, float]]] = []
    for step in range(max_tokens):
        want_hidden = step == 0 and inject_at is not None and return_hidden
        out = bundle.model(inputs_embeds=embs, output_hidden_states=want_hidden)
        if want_hidden:
            hidden = out.hidden_states[-2][0, inject_at]
            injected_hidden = hidden.to(torch.float64).cpu().numpy().copy()
        logp = torch.log_softmax(out.logits[0, -1].to(torch.float64), dim=-1)
        choice = int(torch.argmax(logp))
        top = torch.topk(logp, k)
        logprobs = {tok.key(int(i)): float(v)
                    for v, i in zip(top.values, top.indices)}
        emitted.append((tok.piece(choice, first=step == 0), logprobs))
        next_row = wte(torch.tensor([choice], dtype=torch.long,
                                    device=bundle.device))
        embs = torch.cat([embs, next_row.unsqueeze(0)], dim=1)

    return GreedyResult(text="".join(p for p, _ in emitted), tokens=emitted,
                        injected_hidden=injected_hidden)


@torch.no_grad()
def embed_texts(bundle: ModelBundle, texts: Sequence[str]) -> list[np.ndarray]:
    """Mean-pooled last-layer hidden states; empty text embeds to zeros."""
    out = []
    for text in texts:
        ids = bundle.tokenizer.encode(text)
        if not ids:
            out.append(np.zeros(bundle.input_dim))
            continue
        result = bundle.model(
            input_ids=torch.tensor([ids], dtype=torch.long, device=bundle.device),
            output_hidden_states=True)
        pooled = result.hidden_states[-1][0].mean(dim=0)
        out.append(pooled.to(torch.float64).cpu().numpy().copy())
    return out
