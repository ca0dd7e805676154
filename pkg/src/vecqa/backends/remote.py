"""HTTP client for a model served over the wire protocol.

Endpoints:

    POST /v1/embed     {"texts": [...]}
                    -> {"dim": int, "vectors": [[...], ...]}
    POST /v1/generate  {"prompt", "max_tokens", "temperature",
                        "inject_embedding": [...] | null,
                        "return_hidden": bool, "top_logprobs": int}
                    -> {"text", "tokens": [{"token", "logprobs": {str: num}}],
                        "injected_hidden": [...] | null,
                        "usage": {"output_tokens": int, "wall_time_ms": num}}
    GET  /v1/info      -> {"model", "input_dim", "hidden_dim", "vocab"}

Unknown fields in responses are ignored.
"""

from __future__ import annotations

import numpy as np
import requests

from ..errors import BackendError, DimMismatchError
from . import Backend, GenerationRequest, GenerationTrace, TokenLogprobs, Usage


class RemoteBackend(Backend):
    def __init__(self, base_url: str, timeout: float = 120.0,
                 session: requests.Session | None = None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()

    def _post(self, path: str, payload: dict) -> dict:
        url = self.base_url + path
        try:
            resp = self._session.post(url, json=payload, timeout=self.timeout)
        except requests.RequestException as exc:
            raise BackendError(f"transport failure POST {url}: {exc}") from exc
        return self._body(resp, url)

    def _get(self, path: str) -> dict:
        url = self.base_url + path
        try:
            resp = self._session.get(url, timeout=self.timeout)
        except requests.RequestException as exc:
            raise BackendError(f"transport failure GET {url}: {exc}") from exc
        return self._body(resp, url)

    @staticmethod
    def _body(resp: requests.Response, url: str) -> dict:
        if resp.status_code != 200:
            raise BackendError(
                f"{url} returned HTTP {resp.status_code}: {resp.text[:300]}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise BackendError(f"{url} returned non-JSON body") from exc
        if not isinstance(body, dict):
            raise BackendError(f"{url} returned a non-object body")
        return body

    # -- backend contract ---------------------------------------------------

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        body = self._post("/v1/embed", {"texts": list(texts)})
        try:
            dim = int(body["dim"])
            vectors = body["vectors"]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed /v1/embed response: {exc}") from exc
        if len(vectors) != len(texts):
            raise BackendError(
                f"/v1/embed returned {len(vectors)} vectors for {len(texts)} texts")
        out = []
        for vec in vectors:
            v = np.asarray(vec, dtype=np.float64)
            if v.shape != (dim,):
                raise DimMismatchError(
                    f"/v1/embed vector has shape {v.shape}, declared dim {dim}")
            out.append(v)
        return out

    def generate(self, request: GenerationRequest) -> GenerationTrace:
        payload = {
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "inject_embedding": (None if request.inject_embedding is None
                                 else np.asarray(request.inject_embedding,
                                                 dtype=np.float64).tolist()),
            "return_hidden": request.return_hidden,
            "top_logprobs": request.top_logprobs,
        }
        body = self._post("/v1/generate", payload)
        try:
            tokens = [TokenLogprobs(token=t["token"],
                                    logprobs={k: float(v)
                                              for k, v in t["logprobs"].items()})
                      for t in body["tokens"]]
            usage = Usage(output_tokens=int(body["usage"]["output_tokens"]),
                          wall_time_ms=float(body["usage"]["wall_time_ms"]))
            text = body["text"]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed /v1/generate response: {exc}") from exc
        hidden = None
        if body.get("injected_hidden") is not None:
            hidden = np.asarray(body["injected_hidden"], dtype=np.float64)
        return GenerationTrace(text=text, tokens=tokens, injected_hidden=hidden,
                               usage=usage)

    def info(self) -> dict:
        body = self._get("/v1/info")
        missing = [k for k in ("model", "input_dim", "hidden_dim", "vocab")
                   if k not in body]
        if missing:
            raise BackendError(f"/v1/info response missing {missing[0]!r}")
        return {"model": body["model"], "input_dim": int(body["input_dim"]),
                "hidden_dim": int(body["hidden_dim"]), "vocab": int(body["vocab"])}
