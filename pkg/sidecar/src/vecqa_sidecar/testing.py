"""Helpers for exercising the sidecar inside a test process."""

from __future__ import annotations

import threading
import time
from contextlib import contextmanager

import numpy as np
import requests
import uvicorn

from .config import SidecarConfig
from .server import make_app


@contextmanager
def serve_in_thread(config: SidecarConfig | None = None, app=None,
                    startup_timeout: float = 15.0):
    """Run the server on an ephemeral port in a daemon thread; yield its URL."""
    if app is None:
        app = make_app(config or SidecarConfig())
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=0,
                                           log_level="warning"))
    thread = threading.Thread(target=server.run, name="vecqa-sidecar",
                              daemon=True)
    thread.start()
    try:
        deadline = time.monotonic() + startup_timeout
        while not server.started:
            if time.monotonic() > deadline or not thread.is_alive():
                raise RuntimeError("sidecar server failed to start")
            time.sleep(0.01)
        port = server.servers[0].sockets[0].getsockname()[1]
        yield f"http://127.0.0.1:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=startup_timeout)


def fetch_embedding_row(base_url: str, token: str) -> np.ndarray:
    """The input-embedding row a token receives, via the diagnostic endpoint."""
    resp = requests.get(base_url.rstrip("/") + "/v1/embedding_row",
                        params={"token": token}, timeout=30)
    resp.raise_for_status()
    return np.asarray(resp.json()["vector"], dtype=np.float64)


def contract_fixture(base_url: str):
    """Conformance fixture for a server running the builtin model."""
    from vecqa.backends.contract import ContractFixture
    from vecqa.backends.remote import RemoteBackend

    return ContractFixture(
        backend=RemoteBackend(base_url),
        prompts=["the water was long", "people could see the number",
                 "come down now"],
        injection_tokens=["water", "down"],
        embedding_row=lambda tok: fetch_embedding_row(base_url, tok),
        enforces_max_tokens=True)
