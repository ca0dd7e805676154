"""Run configuration: flat key=value files with section prefixes.

Example file:

    run.mode=embqa
    retrieval.first_stage=lexical
    retrieval.m=100
    retrieval.n=10
    gate.threshold=0.05
    backend.kind=toy

Every key has a command-line twin; flags override file values.  Unknown keys
and unparseable values are configuration errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .backends import Backend
from .backends.remote import RemoteBackend
from .backends.scripted import ScriptedBackend
from .backends.toy import ToyBackend
from .errors import ConfigError
from .gate import GateConfig
from .pipeline import EngineConfig
from .refine import RefinerConfig


@dataclass
class BackendSpec:
    kind: str = "toy"   # "toy" | "scripted" | "remote"
    url: str = ""
    script: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("toy", "scripted", "remote"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")

    @classmethod
    def from_flag(cls, value: str, seed: int = 0) -> "BackendSpec":
        """Parse the CLI backend flag: 'toy', 'script:<path>', or a URL."""
        if value == "toy":
            return cls(kind="toy", seed=seed)
        if value.startswith("script:"):
            return cls(kind="scripted", script=value[len("script:"):], seed=seed)
        if value.startswith(("http://", "https://")):
            return cls(kind="remote", url=value, seed=seed)
        raise ConfigError(
            f"backend must be 'toy', 'script:<path>', or an http(s) URL, got {value!r}")


@dataclass
class RunConfig:
    engine: EngineConfig = field(default_factory=EngineConfig)
    refiner: RefinerConfig = field(default_factory=RefinerConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    backend: BackendSpec = field(default_factory=BackendSpec)
    workers: int = 1

    def validate(self) -> None:
        if self.workers < 1:
            raise ConfigError("run.workers must be at least 1")
        if self.backend.kind == "remote" and not self.backend.url:
            raise ConfigError("backend.kind=remote needs backend.url")
        if self.backend.kind == "scripted" and not self.backend.script:
            raise ConfigError("backend.kind=scripted needs backend.script")


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_opt_int(raw: str):
    low = raw.strip().lower()
    if low in ("", "none"):
        return None
    return int(raw)


# key -> (section attr on RunConfig, field name, parser)
KEY_MAP: dict[str, tuple[str, str, object]] = {
    "run.mode": ("engine", "mode", str),
    "run.seed": ("engine", "seed", int),
    "run.workers": (None, "workers", int),
    "retrieval.first_stage": ("engine", "first_stage", str),
    "retrieval.m": ("engine", "working_set_size", int),
    "retrieval.n": ("engine", "prompt_passages", int),
    "retrieval.metric": ("engine", "metric", str),
    "gen.k": ("engine", "candidates", int),
    "gen.max_tokens": ("engine", "max_tokens", int),
    "gen.temperature": ("engine", "temperature", float),
    "gen.top_logprobs": ("engine", "top_logprobs", int),
    "rerank.mode": ("engine", "rerank_mode", str),
    "refiner.mode": ("engine", "refiner_mode", str),
    "refiner.tau": ("refiner", "tau", float),
    "refiner.lr": ("refiner", "lr", float),
    "refiner.epochs": ("refiner", "epochs", int),
    "refiner.batch_size": ("refiner", "batch_size", _parse_opt_int),
    "refiner.seed": ("refiner", "seed", int),
    "gate.threshold": ("gate", "threshold", float),
    "gate.p": ("gate", "top_gaps", int),
    "gate.max_attempts": ("gate", "max_attempts", int),
    "gate.standardize": ("gate", "standardize", _parse_bool),
    "gate.seed": ("gate", "seed", int),
    "backend.kind": ("backend", "kind", str),
    "backend.url": ("backend", "url", str),
    "backend.script": ("backend", "script", str),
    "backend.seed": ("backend", "seed", int),
}


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read key=value lines; '#' starts a comment, blanks are skipped."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
            key, _, value = stripped.partition("=")
            key = key.strip()
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = value.strip()
    return values


def build_run_config(file_values: Mapping[str, str] | None = None,
                     overrides: Mapping[str, str] | None = None) -> RunConfig:
    """Defaults, then file values, then explicit overrides (flags)."""
    merged: dict[str, str] = {}
    merged.update(file_values or {})
    merged.update(overrides or {})

    sections: dict[str, dict] = {"engine": {}, "refiner": {}, "gate": {},
                                 "backend": {}}
    top: dict[str, object] = {}
    for key, raw in merged.items():
        if key not in KEY_MAP:
            raise ConfigError(f"unknown config key {key!r}")
        section, fname, parser = KEY_MAP[key]
        try:
            value = parser(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
        if section is None:
            top[fname] = value
        else:
            sections[section][fname] = value

    try:
        cfg = RunConfig(
            engine=EngineConfig(**sections["engine"]),
            refiner=RefinerConfig(**sections["refiner"]),
            gate=GateConfig(**sections["gate"]),
            backend=BackendSpec(**sections["backend"]),
            **top,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def make_backend(spec: BackendSpec) -> Backend:
    if spec.kind == "toy":
        return ToyBackend(seed=spec.seed)
    if spec.kind == "scripted":
        return ScriptedBackend.from_file(spec.script)
    return RemoteBackend(spec.url)
