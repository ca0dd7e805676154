"""Conformance checks every backend must satisfy.

The same suite runs against the in-process backends and against a remote
server through :class:`RemoteBackend`, so client and servers are held to one
contract.  Checks raise ``AssertionError`` naming the failed property.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import Backend, GenerationRequest


@dataclass
class ContractFixture:
    """What the suite needs to know about a backend under test.

    ``embedding_row`` maps a token to the input embedding it would receive;
    backends that cannot expose rows skip the injection-equivalence check.
    ``enforces_max_tokens`` is off for replay backends that serve canned
    replies of fixed length.
    """

    backend: Backend
    prompts: list[str]
    injection_tokens: list[str] = field(default_factory=list)
    embedding_row: Callable[[str], np.ndarray] | None = None
    enforces_max_tokens: bool = True
    max_tokens: int = 4


def check_info(fx: ContractFixture) -> None:
    info = fx.backend.info()
    for key in ("model", "input_dim", "hidden_dim", "vocab"):
        assert key in info, f"info missing {key!r}"
    assert isinstance(info["model"], str), "info.model must be a string"
    for key in ("input_dim", "hidden_dim", "vocab"):
        assert isinstance(info[key], int), f"info.{key} must be an int"
    assert info["input_dim"] > 0 and info["hidden_dim"] > 0


def check_embed(fx: ContractFixture) -> None:
    info = fx.backend.info()
    texts = fx.prompts[:3]
    vecs = fx.backend.embed(texts)
    assert len(vecs) == len(texts), "embed must return one vector per text"
    for v in vecs:
        assert v.shape == (info["input_dim"],), \
            f"embed dim {v.shape} != declared input_dim {info['input_dim']}"
        assert np.all(np.isfinite(v)), "embed returned non-finite values"
    again = fx.backend.embed(texts)
    for a, b in zip(vecs, again):
        assert np.array_equal(a, b), "embed must be deterministic"


def check_generate_determinism(fx: ContractFixture) -> None:
    req = GenerationRequest(prompt=fx.prompts[0], max_tokens=fx.max_tokens)
    t1 = fx.backend.generate(req)
    t2 = fx.backend.generate(req)
    assert t1.text == t2.text, "generation text must be deterministic"
    assert [t.token for t in t1.tokens] == [t.token for t in t2.tokens], \
        "generation tokens must be deterministic"
    assert [t.logprobs for t in t1.tokens] == [t.logprobs for t in t2.tokens], \
        "per-token logprobs must be deterministic"


def check_trace_invariants(fx: ContractFixture) -> None:
    top = 5
    req = GenerationRequest(prompt=fx.prompts[-1], max_tokens=fx.max_tokens,
                            top_logprobs=top)
    trace = fx.backend.generate(req)
    assert trace.usage.output_tokens == len(trace.tokens), \
        "usage.output_tokens must equal the emitted token count"
    assert trace.usage.wall_time_ms >= 0.0
    assert "".join(t.token for t in trace.tokens) == trace.text, \
        "token pieces must concatenate to the reply text"
    if fx.enforces_max_tokens:
        assert len(trace.tokens) <= fx.max_tokens, "emitted more than max_tokens"
    for t in trace.tokens:
        assert len(t.logprobs) <= top, \
            f"logprob map holds {len(t.logprobs)} entries, cap was {top}"
        total = sum(math.exp(lp) for lp in t.logprobs.values())
        assert total <= 1.0 + 1e-6, \
            f"top logprobs exponentiate to {total} > 1 + 1e-6"


def check_hidden_presence(fx: ContractFixture) -> None:
    info = fx.backend.info()
    dim = info["input_dim"]
    vec = np.zeros(dim)
    vec[0] = 1.0
    plain = fx.backend.generate(
        GenerationRequest(prompt=fx.prompts[0], max_tokens=1, return_hidden=True))
    assert plain.injected_hidden is None, \
        "injected_hidden must be absent without an injected embedding"
    silent = fx.backend.generate(
        GenerationRequest(prompt=fx.prompts[0], max_tokens=1,
                          inject_embedding=vec, return_hidden=False))
    assert silent.injected_hidden is None, \
        "injected_hidden must be absent when return_hidden is off"
    probed = fx.backend.generate(
        GenerationRequest(prompt=fx.prompts[0], max_tokens=1,
                          inject_embedding=vec, return_hidden=True))
    assert probed.injected_hidden is not None, \
        "injected_hidden must be present when requested with an injection"
    assert probed.injected_hidden.shape == (info["hidden_dim"],), \
        "injected_hidden dim must match declared hidden_dim"
    assert np.all(np.isfinite(probed.injected_hidden))


def check_injection_equivalence(fx: ContractFixture) -> None:
    if fx.embedding_row is None or not fx.injection_tokens:
        return
    for prompt in fx.prompts[:3]:
        for tok in fx.injection_tokens[:2]:
            textual = fx.backend.generate(
                GenerationRequest(prompt=prompt + " " + tok,
                                  max_tokens=fx.max_tokens))
            injected = fx.backend.generate(
                GenerationRequest(prompt=prompt, max_tokens=fx.max_tokens,
                                  inject_embedding=fx.embedding_row(tok)))
            assert textual.text == injected.text, (
                f"injecting the embedding row of {tok!r} diverged from the "
                f"textual append: {textual.text!r} vs {injected.text!r}")
            assert [t.token for t in textual.tokens] == \
                   [t.token for t in injected.tokens]


ALL_CHECKS = (
    check_info,
    check_embed,
    check_generate_determinism,
    check_trace_invariants,
    check_hidden_presence,
    check_injection_equivalence,
)


def run_contract(fx: ContractFixture) -> list[str]:
    """Run every check; return the names of the checks that ran."""
    ran = []
    for check in ALL_CHECKS:
        check(fx)
        ran.append(check.__name__)
    return ran
