"""FastAPI app exposing a causal LM over the /v1 wire protocol.

Endpoints:

    POST /v1/embed          {"texts": [...]} -> {"dim", "vectors"}
    POST /v1/generate       greedy decoding, optional injected embedding,
                            per-token top-k logprobs, optional penultimate
                            hidden state at the injected position
    GET  /v1/info           {"model", "input_dim", "hidden_dim", "vocab"}
    GET  /v1/embedding_row  diagnostic: the input-embedding row of one token

Unknown request fields are ignored.  Refused requests return 400 with a
machine-readable ``reason``; when ``max_inflight`` requests are already in
flight the server answers 503.  The server keeps no state between requests.
"""

from __future__ import annotations

import threading
import time
from contextlib import contextmanager

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from .config import SidecarConfig
from .model import GenerationError, ModelBundle, embed_texts, generate_greedy, load_model


class _Overloaded(Exception):
    pass


class EmbedIn(BaseModel):
    model_config = ConfigDict(extra="ignore")

    texts: list[str]


class GenerateIn(BaseModel):
    model_config = ConfigDict(extra="ignore")

    prompt: str
    max_tokens: int = 16
    temperature: float = 0.0
    inject_embedding: list[float] | None = None
    return_hidden: bool = False
    top_logprobs: int = 20


@contextmanager
def _slot(semaphore: threading.BoundedSemaphore):
    if not semaphore.acquire(blocking=False):
        raise _Overloaded()
    try:
        yield
    finally:
        semaphore.release()


def make_app(config: SidecarConfig | None = None,
             bundle: ModelBundle | None = None) -> FastAPI:
    """Build the server app; loads the configured model unless one is given."""
    config = config or SidecarConfig()
    bundle = bundle or load_model(config.model, device=config.device)
    if config.input_dim is not None and config.input_dim != bundle.input_dim:
        raise ValueError(f"configured input dim {config.input_dim} does not "
                         f"match the model's {bundle.input_dim}")
    if config.hidden_dim is not None and config.hidden_dim != bundle.hidden_dim:
        raise ValueError(f"configured hidden dim {config.hidden_dim} does not "
                         f"match the model's {bundle.hidden_dim}")

    app = FastAPI(title="vecqa sidecar", docs_url=None, redoc_url=None)
    inflight = threading.BoundedSemaphore(config.max_inflight)
    app.state.inflight = inflight
    app.state.bundle = bundle

    @app.exception_handler(GenerationError)
    def _bad_request(request, exc: GenerationError):
        return JSONResponse(status_code=400,
                            content={"error": str(exc), "reason": exc.reason})

    @app.exception_handler(_Overloaded)
    def _busy(request, exc: _Overloaded):
        return JSONResponse(
            status_code=503,
            content={"error": "too many concurrent requests",
                     "reason": "overloaded"})

    @app.post("/v1/embed")
    def embed(body: EmbedIn) -> dict:
        with _slot(inflight):
            vectors = embed_texts(bundle, body.texts)
        return {"dim": bundle.input_dim, "vectors": [v.tolist() for v in vectors]}

    @app.post("/v1/generate")
    def generate(body: GenerateIn) -> dict:
        with _slot(inflight):
            started = time.perf_counter()
            if body.temperature != 0.0:
                raise GenerationError(
                    "decoding is greedy; temperature must be 0", "greedy_only")
            inject = None
            if body.inject_embedding is not None:
                inject = np.asarray(body.inject_embedding, dtype=np.float64)
            result = generate_greedy(
                bundle, body.prompt, body.max_tokens, inject=inject,
                return_hidden=body.return_hidden,
                top_logprobs=min(body.top_logprobs, config.top_logprobs_cap))
            wall_ms = (time.perf_counter() - started) * 1000.0
        hidden = (None if result.injected_hidden is None
                  else result.injected_hidden.tolist())
        return {
            "text": result.text,
            "tokens": [{"token": piece, "logprobs": logprobs}
                       for piece, logprobs in result.tokens],
            "injected_hidden": hidden,
            "usage": {"output_tokens": len(result.tokens),
                      "wall_time_ms": wall_ms},
        }

    @app.get("/v1/info")
    def info() -> dict:
        return {"model": bundle.name, "input_dim": bundle.input_dim,
                "hidden_dim": bundle.hidden_dim, "vocab": bundle.vocab_rows}

    @app.get("/v1/embedding_row")
    def embedding_row(token: str) -> dict:
        with _slot(inflight):
            row = bundle.embedding_row(token)
        return {"token": token, "vector": row.tolist()}

    return app
