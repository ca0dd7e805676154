"""Sidecar conformance and behavior tests.

The server is exercised the way the engine uses it: through the remote
client over a real socket.  Skips cleanly when the sidecar package is not
installed, so the engine's own suite stands alone.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

pytest.importorskip("vecqa_sidecar")

import requests
import torch

from vecqa.backends import GenerationRequest
from vecqa.backends.contract import ALL_CHECKS, run_contract
from vecqa.backends.remote import RemoteBackend
from vecqa.errors import BackendError
from vecqa_sidecar import SidecarConfig, load_model, make_app
from vecqa_sidecar.model import generate_greedy
from vecqa_sidecar.testing import (contract_fixture, fetch_embedding_row,
                                   serve_in_thread)


@pytest.fixture(scope="module")
def server_url():
    with serve_in_thread() as url:
        yield url


@pytest.fixture(scope="module")
def remote(server_url):
    return RemoteBackend(server_url)


@pytest.fixture(scope="module")
def local_bundle():
    return load_model("builtin:0")


# -- conformance ----------------------------------------------------------

def test_contract_suite(server_url):
    assert run_contract(contract_fixture(server_url)) == \
        [c.__name__ for c in ALL_CHECKS]


def test_info_matches_embed(remote):
    info = remote.info()
    (vec,) = remote.embed(["the water was long"])
    assert vec.shape == (info["input_dim"],)
    assert info["hidden_dim"] == 32
    assert info["model"] == "builtin-2l-32d-seed0"
    assert info["vocab"] == 72


def test_injection_equivalence_over_wire(remote, server_url):
    for prompt, tok in [("the water was long", "down"),
                        ("people could see", "water"),
                        ("come down", "the")]:
        textual = remote.generate(GenerationRequest(
            prompt=prompt + " " + tok, max_tokens=4))
        injected = remote.generate(GenerationRequest(
            prompt=prompt, max_tokens=4,
            inject_embedding=fetch_embedding_row(server_url, tok)))
        assert textual.text == injected.text
        assert [t.token for t in textual.tokens] == \
            [t.token for t in injected.tokens]
        assert [t.logprobs for t in textual.tokens] == \
            [t.logprobs for t in injected.tokens]


def test_penultimate_hidden_matches_local(remote, server_url, local_bundle):
    row = fetch_embedding_row(server_url, "water")
    want = generate_greedy(local_bundle, "the number was", 1, inject=row,
                           return_hidden=True).injected_hidden
    got = remote.generate(GenerationRequest(
        prompt="the number was", max_tokens=1, inject_embedding=row,
        return_hidden=True)).injected_hidden
    assert got is not None
    assert np.array_equal(got, want)


def test_embedding_row_matches_local(server_url, local_bundle):
    assert np.array_equal(fetch_embedding_row(server_url, "water"),
                          local_bundle.embedding_row("water"))


# -- request handling -------------------------------------------------------

def test_dim_mismatch_is_400(remote, server_url):
    with pytest.raises(BackendError, match="HTTP 400"):
        remote.generate(GenerationRequest(prompt="the water", max_tokens=1,
                                          inject_embedding=np.zeros(5)))
    resp = requests.post(server_url + "/v1/generate", json={
        "prompt": "the water", "max_tokens": 1,
        "inject_embedding": [0.0] * 5})
    assert resp.status_code == 400
    assert resp.json()["reason"] == "dim_mismatch"


def test_temperature_rejected(server_url):
    resp = requests.post(server_url + "/v1/generate", json={
        "prompt": "the water", "max_tokens": 1, "temperature": 0.5})
    assert resp.status_code == 400
    assert resp.json()["reason"] == "greedy_only"


def test_empty_prompt_rejected_unless_injected(remote, server_url):
    resp = requests.post(server_url + "/v1/generate", json={
        "prompt": "", "max_tokens": 1})
    assert resp.status_code == 400
    assert resp.json()["reason"] == "empty_prompt"
    # an injected embedding is a valid lone input position
    trace = remote.generate(GenerationRequest(
        prompt="", max_tokens=2,
        inject_embedding=fetch_embedding_row(server_url, "water")))
    assert len(trace.tokens) == 2


def test_context_overflow_rejected(server_url):
    resp = requests.post(server_url + "/v1/generate", json={
        "prompt": "the water", "max_tokens": 300})
    assert resp.status_code == 400
    assert resp.json()["reason"] == "context_overflow"


def test_unknown_request_fields_ignored(server_url):
    resp = requests.post(server_url + "/v1/generate", json={
        "prompt": "the water", "max_tokens": 2,
        "client_tag": "xyz", "debug": {"level": 3}})
    assert resp.status_code == 200
    assert len(resp.json()["tokens"]) == 2
    resp = requests.post(server_url + "/v1/embed",
                         json={"texts": ["the"], "verbose": True})
    assert resp.status_code == 200


def test_max_tokens_and_usage(remote):
    trace = remote.generate(GenerationRequest(prompt="the water", max_tokens=6))
    assert len(trace.tokens) == 6
    assert trace.usage.output_tokens == 6
    assert trace.usage.wall_time_ms >= 0.0
    assert "".join(t.token for t in trace.tokens) == trace.text


def test_top_logprobs_cap():
    app = make_app(SidecarConfig(top_logprobs_cap=3))
    with serve_in_thread(app=app) as url:
        trace = RemoteBackend(url).generate(
            GenerationRequest(prompt="the water", max_tokens=1, top_logprobs=50))
        assert len(trace.tokens[0].logprobs) == 3


def test_vocab_bounds_top_logprobs(remote):
    trace = remote.generate(GenerationRequest(
        prompt="the water", max_tokens=1, top_logprobs=500))
    assert len(trace.tokens[0].logprobs) == 72


def test_embed_empty_text_is_zero(remote):
    zero, nonzero = remote.embed(["", "the water"])
    assert not zero.any()
    assert nonzero.any()


def test_overload_returns_503():
    app = make_app(SidecarConfig(max_inflight=1))
    with serve_in_thread(app=app) as url:
        assert app.state.inflight.acquire(blocking=False)
        try:
            resp = requests.post(url + "/v1/embed", json={"texts": ["the"]})
            assert resp.status_code == 503
            assert resp.json()["reason"] == "overloaded"
        finally:
            app.state.inflight.release()
        resp = requests.post(url + "/v1/embed", json={"texts": ["the"]})
        assert resp.status_code == 200


# -- concurrency ---------------------------------------------------------------

def test_hidden_capture_is_request_scoped(remote, server_url):
    rows = {tok: fetch_embedding_row(server_url, tok)
            for tok in ("water", "down", "people", "time")}

    def probe(tok: str) -> np.ndarray:
        return remote.generate(GenerationRequest(
            prompt="the number was", max_tokens=1,
            inject_embedding=rows[tok], return_hidden=True)).injected_hidden

    serial = {tok: probe(tok) for tok in rows}
    jobs = [tok for tok in rows for _ in range(4)]
    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(probe, jobs))
    for tok, hidden in zip(jobs, results):
        assert np.array_equal(hidden, serial[tok]), \
            f"hidden state for {tok!r} leaked across concurrent requests"


# -- configuration ----------------------------------------------------------------

def test_config_from_env():
    cfg = SidecarConfig.from_env({"SIDECAR_MODEL": "builtin:3",
                                  "SIDECAR_PORT": "9001"})
    assert cfg.model == "builtin:3"
    assert cfg.port == 9001
    assert SidecarConfig.from_env({}).model == "builtin:0"
    assert SidecarConfig.from_env({}, model="builtin:7").model == "builtin:7"
    with pytest.raises(ValueError, match="SIDECAR_PORT"):
        SidecarConfig.from_env({"SIDECAR_PORT": "ninety"})


def test_config_validation():
    with pytest.raises(ValueError, match="top_logprobs_cap"):
        SidecarConfig(top_logprobs_cap=0)
    with pytest.raises(ValueError, match="max_inflight"):
        SidecarConfig(max_inflight=0)
    with pytest.raises(ValueError, match="port"):
        SidecarConfig(port=70000)


def test_dim_expectations_checked_at_startup(local_bundle):
    with pytest.raises(ValueError, match="input dim"):
        make_app(SidecarConfig(input_dim=64), bundle=local_bundle)
    with pytest.raises(ValueError, match="hidden dim"):
        make_app(SidecarConfig(hidden_dim=64), bundle=local_bundle)
    app = make_app(SidecarConfig(input_dim=32, hidden_dim=32),
                   bundle=local_bundle)
    assert app.state.bundle is local_bundle


def test_builtin_seed_determinism():
    a = load_model("builtin:0")
    b = load_model("builtin:0")
    c = load_model("builtin:1")
    wte = lambda bundle: bundle.model.get_input_embeddings().weight
    assert torch.equal(wte(a), wte(b))
    assert not torch.equal(wte(a), wte(c))
