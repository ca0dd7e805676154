"""Model backends and the shared request/trace types.

Every backend speaks the same three-operation contract: ``embed`` a batch of
texts, ``generate`` greedily from a prompt (optionally with one extra input
position whose embedding is supplied directly instead of looked up), and
``info`` describing the served model.  ``probe`` is ``generate`` flagged as an
embedding-level read; the usage meter books it separately so hidden-state
probes never inflate the per-question prompt count.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np


@dataclass
class GenerationRequest:
    """One generation call.

    ``inject_embedding``, when set, appends a final input position whose
    embedding is the given vector rather than a token lookup.
    ``return_hidden`` asks for the penultimate-layer hidden state at that
    injected position.
    """

    prompt: str
    max_tokens: int
    temperature: float = 0.0
    inject_embedding: np.ndarray | None = None
    return_hidden: bool = False
    top_logprobs: int = 20

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be a positive int")
        if self.top_logprobs < 1:
            raise ValueError("top_logprobs must be a positive int")


@dataclass
class TokenLogprobs:
    """One emitted token and its top log-probabilities at that step."""

    token: str
    logprobs: dict[str, float]


@dataclass
class Usage:
    output_tokens: int
    wall_time_ms: float = 0.0


@dataclass
class GenerationTrace:
    """Backend reply: text, per-token logprobs, optional injected hidden."""

    text: str
    tokens: list[TokenLogprobs]
    injected_hidden: np.ndarray | None
    usage: Usage


class Backend:
    """Base backend; subclasses implement embed/generate/info."""

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        raise NotImplementedError

    def generate(self, request: GenerationRequest) -> GenerationTrace:
        raise NotImplementedError

    def info(self) -> dict:
        raise NotImplementedError

    def probe(self, request: GenerationRequest) -> GenerationTrace:
        """A generate call used only to read hidden state, not output text."""
        return self.generate(request)


@dataclass
class UsageCounters:
    generate_calls: int = 0
    output_tokens: int = 0
    probe_calls: int = 0
    probe_tokens: int = 0
    embed_calls: int = 0
    wall_time_ms: float = 0.0

    def merge(self, other: "UsageCounters") -> None:
        self.generate_calls += other.generate_calls
        self.output_tokens += other.output_tokens
        self.probe_calls += other.probe_calls
        self.probe_tokens += other.probe_tokens
        self.embed_calls += other.embed_calls
        self.wall_time_ms += other.wall_time_ms

    def as_dict(self) -> dict:
        return {
            "generate_calls": self.generate_calls,
            "output_tokens": self.output_tokens,
            "probe_calls": self.probe_calls,
            "probe_tokens": self.probe_tokens,
            "embed_calls": self.embed_calls,
            "wall_time_ms": self.wall_time_ms,
        }


class UsageMeter(Backend):
    """Backend wrapper that books every call against :class:`UsageCounters`.

    Prompt accounting: ``generate`` increments ``generate_calls``; ``probe``
    books under ``probe_calls``/``probe_tokens`` instead, and ``embed`` under
    ``embed_calls``.  Wall time accumulates across all three.  Thread-safe.
    """

    def __init__(self, inner: Backend):
        self.inner = inner
        self.counters = UsageCounters()
        self._lock = threading.Lock()

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        out = self.inner.embed(texts)
        with self._lock:
            self.counters.embed_calls += 1
        return out

    def generate(self, request: GenerationRequest) -> GenerationTrace:
        trace = self.inner.generate(request)
        with self._lock:
            self.counters.generate_calls += 1
            self.counters.output_tokens += trace.usage.output_tokens
            self.counters.wall_time_ms += trace.usage.wall_time_ms
        return trace

    def probe(self, request: GenerationRequest) -> GenerationTrace:
        trace = self.inner.generate(request)
        with self._lock:
            self.counters.probe_calls += 1
            self.counters.probe_tokens += trace.usage.output_tokens
            self.counters.wall_time_ms += trace.usage.wall_time_ms
        return trace

    def info(self) -> dict:
        return self.inner.info()


def usage_report(per_question: list[UsageCounters]) -> dict:
    """Aggregate per-question counters into totals and per-question means."""
    total = UsageCounters()
    for c in per_question:
        total.merge(c)
    n = max(len(per_question), 1)
    return {
        "questions": len(per_question),
        "total": total.as_dict(),
        "per_question": {
            "generate_calls": total.generate_calls / n,
            "output_tokens": total.output_tokens / n,
            "probe_calls": total.probe_calls / n,
            "wall_time_ms": total.wall_time_ms / n,
        },
    }
