"""Exploration gate: sample random embeddings until one spreads evenly.

A candidate exploratory embedding is injected as one extra input position and
judged by the hidden state it produces at the penultimate layer.  The gap
statistic sorts the (optionally standardized) hidden entries in descending
order and sums the squares of the first few adjacent gaps; a small value means
no handful of coordinates dominates.  Sampling retries until the statistic
falls below the threshold, up to a cap, and keeps the best attempt seen when
nothing qualifies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backends import Backend, GenerationRequest
from .errors import BackendError


@dataclass(frozen=True)
class GateConfig:
    threshold: float = 0.05
    top_gaps: int = 5
    max_attempts: int = 50
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.top_gaps < 1:
            raise ValueError("top_gaps must be at least 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")


@dataclass
class GateSample:
    embedding: np.ndarray
    hidden: np.ndarray
    statistic: float
    accepted: bool
    attempt: int


def sample_exploratory(dim: int, seed: int, attempt: int) -> np.ndarray:
    """Standard normal draw, reproducible from (seed, attempt)."""
    if dim < 1:
        raise ValueError("dim must be positive")
    if attempt < 1:
        raise ValueError("attempts are numbered from 1")
    rng = np.random.default_rng([seed, attempt])
    return rng.standard_normal(dim)


def gap_statistic(values, top_gaps: int, standardize: bool = True) -> float:
    """Sum of squared adjacent gaps among the largest entries.

    Entries are sorted descending; the statistic is
    sum_{i<=top_gaps} (v_(i) - v_(i+1))^2.  Standardization first centers the
    vector and divides by the population standard deviation; a zero-variance
    vector then yields +inf so it can never pass a finite threshold.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if top_gaps >= v.shape[0]:
        raise ValueError(
            f"top_gaps={top_gaps} needs at least {top_gaps + 1} entries, got {v.shape[0]}")
    if standardize:
        sd = float(v.std())
        if sd == 0.0:
            return math.inf
        v = (v - v.mean()) / sd
    ordered = np.sort(v)[::-1]
    gaps = ordered[:top_gaps] - ordered[1:top_gaps + 1]
    return float(np.sum(gaps * gaps))


def acquire_exploratory(backend: Backend, prompt: str,
                        config: GateConfig) -> GateSample:
    """Resample-and-test loop over injected exploratory embeddings.

    Each attempt draws a fresh embedding from (seed, attempt), probes the
    backend for the penultimate hidden state at the injected position, and
    accepts the first statistic below the threshold.  If the cap is reached
    the lowest-statistic attempt is returned with ``accepted=False``.
    """
    info = backend.info()
    dim = int(info["input_dim"])
    best: GateSample | None = None
    for attempt in range(1, config.max_attempts + 1):
        e_r = sample_exploratory(dim, config.seed, attempt)
        trace = backend.probe(GenerationRequest(
            prompt=prompt, max_tokens=1, inject_embedding=e_r,
            return_hidden=True, top_logprobs=1))
        if trace.injected_hidden is None:
            raise BackendError("backend did not return the injected hidden state")
        stat = gap_statistic(trace.injected_hidden, config.top_gaps,
                             config.standardize)
        sample = GateSample(embedding=e_r, hidden=trace.injected_hidden,
                            statistic=stat, accepted=stat < config.threshold,
                            attempt=attempt)
        if sample.accepted:
            return sample
        if best is None or stat < best.statistic:
            best = sample
    assert best is not None
    return best
