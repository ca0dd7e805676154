"""Server configuration with environment overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Mapping


@dataclass(frozen=True)
class SidecarConfig:
    """Settings for one server process.

    ``input_dim`` and ``hidden_dim`` are optional expectations: when set,
    startup fails unless the loaded model actually serves those dimensions,
    so the advertised /v1/info can never drift from the tensors.
    """

    model: str = "builtin:0"
    device: str = "cpu"
    input_dim: int | None = None
    hidden_dim: int | None = None
    top_logprobs_cap: int = 100
    host: str = "127.0.0.1"
    port: int = 8950
    max_inflight: int = 8

    def __post_init__(self):
        if self.top_logprobs_cap < 1:
            raise ValueError("top_logprobs_cap must be at least 1")
        if self.max_inflight < 1:
            raise ValueError("max_inflight must be at least 1")
        if not 0 <= self.port <= 65535:
            raise ValueError(f"port {self.port} out of range")

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None,
                 **overrides) -> "SidecarConfig":
        """Read SIDECAR_MODEL and SIDECAR_PORT; overrides win over both."""
        if env is None:
            env = os.environ
        kwargs: dict = {}
        if "SIDECAR_MODEL" in env:
            kwargs["model"] = env["SIDECAR_MODEL"]
        if "SIDECAR_PORT" in env:
            raw = env["SIDECAR_PORT"]
            try:
                kwargs["port"] = int(raw)
            except ValueError:
                raise ValueError(f"SIDECAR_PORT must be an integer, got {raw!r}")
        kwargs.update(overrides)
        return cls(**kwargs)
