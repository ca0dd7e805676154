"""Exact dense retrieval over passage embeddings.

Brute-force scoring against every stored vector; no approximate structures.
Inner product is the default metric, cosine is available by configuration.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import Corpus
from .errors import DimMismatchError, EmptyCorpusError, FormatError, NotFoundError

_MAGIC = b"VQDENSE1"
_VERSION = 1

METRICS = ("dot", "cosine")


def ensure_vector(values, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-D float64 array, checking the declared dim."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise DimMismatchError(f"expected a 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimMismatchError(f"expected dim {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def similarity(a, b, metric: str = "dot") -> float:
    """Score two vectors: raw inner product, or cosine when configured."""
    av = ensure_vector(a)
    bv = ensure_vector(b, dim=av.shape[0])
    if metric == "dot":
        return float(av @ bv)
    if metric == "cosine":
        na, nb = float(np.linalg.norm(av)), float(np.linalg.norm(bv))
        if na == 0.0 or nb == 0.0:
            return 0.0
        return float(av @ bv) / (na * nb)
    raise ValueError(f"unknown metric {metric!r}")


@dataclass
class DenseIndex:
    """Embedding matrix aligned with a passage id list."""

    ids: list[str]
    matrix: np.ndarray  # (count, dim) float64
    metric: str = "dot"

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise DimMismatchError(f"matrix must be 2-D, got shape {self.matrix.shape}")
        if len(self.ids) != self.matrix.shape[0]:
            raise DimMismatchError("id count and matrix row count disagree")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        self._row = {pid: i for i, pid in enumerate(self.ids)}
        if len(self._row) != len(self.ids):
            raise FormatError("duplicate ids in dense index")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def vector(self, pid: str) -> np.ndarray:
        if pid not in self._row:
            raise NotFoundError(f"unknown passage id {pid!r}")
        return self.matrix[self._row[pid]]

    def rows_for(self, pids: Sequence[str]) -> np.ndarray:
        return self.matrix[[self._row_of(pid) for pid in pids]]

    def _row_of(self, pid: str) -> int:
        if pid not in self._row:
            raise NotFoundError(f"unknown passage id {pid!r}")
        return self._row[pid]


def build_dense(corpus: Corpus,
                embed: Callable[[list[str]], list[np.ndarray]],
                metric: str = "dot",
                batch_size: int = 64) -> DenseIndex:
    """Embed title + " " + text for every passage with the given embedder."""
    if len(corpus) == 0:
        raise EmptyCorpusError("cannot build a dense index over an empty corpus")
    texts = [p.title + " " + p.text for p in corpus]
    rows: list[np.ndarray] = []
    dim: int | None = None
    for start in range(0, len(texts), batch_size):
        for vec in embed(texts[start:start + batch_size]):
            v = ensure_vector(vec)
            if dim is None:
                dim = v.shape[0]
            elif v.shape[0] != dim:
                raise DimMismatchError(
                    f"embedder returned dim {v.shape[0]} after declaring {dim}")
            rows.append(v)
    return DenseIndex(ids=list(corpus.ids), matrix=np.vstack(rows), metric=metric)


def dense_top_k(index: DenseIndex, query_vec, k: int,
                restrict: Sequence[str] | None = None) -> list[tuple[str, float]]:
    """Top-k by the index metric, descending score, ties by ascending id.

    ``restrict`` limits scoring to a subset of stored ids (used when
    reranking an already-retrieved working set).
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    q = ensure_vector(query_vec, dim=index.dim)
    if restrict is None:
        ids = index.ids
        mat = index.matrix
    else:
        ids = list(restrict)
        mat = index.rows_for(ids)
    # row-wise similarity() keeps scores bit-identical to one-at-a-time
    # scoring; a matrix product can round differently
    scores = [similarity(mat[i], q, index.metric) for i in range(len(ids))]
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [(ids[i], scores[i]) for i in order[:k]]


def save_vector_store(path: str | Path, ids: Sequence[str], matrix: np.ndarray,
                      magic: bytes = _MAGIC) -> None:
    """Vector store layout (all little-endian):

        magic: 8 bytes, version: u8, dim: u32, count: u32
        per row: id (u16 length + UTF-8 bytes)
        then count * dim float32 values, row-major
    """
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    mat = np.asarray(matrix, dtype=np.float32)
    if mat.ndim != 2 or mat.shape[0] != len(ids):
        raise DimMismatchError("matrix shape does not match id count")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<BII", _VERSION, mat.shape[1], mat.shape[0]))
        for pid in ids:
            raw = pid.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise FormatError(f"id too long to store ({len(raw)} bytes)")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(mat.astype("<f4").tobytes(order="C"))


def load_vector_store(path: str | Path,
                      magic: bytes = _MAGIC) -> tuple[list[str], np.ndarray]:
    with open(path, "rb") as fh:
        got = fh.read(8)
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}")
        version, dim, count = struct.unpack("<BII", _read_exact(fh, 9))
        if version != _VERSION:
            raise FormatError(f"unsupported store version {version}")
        ids: list[str] = []
        for _ in range(count):
            (n,) = struct.unpack("<H", _read_exact(fh, 2))
            ids.append(_read_exact(fh, n).decode("utf-8"))
        raw = _read_exact(fh, count * dim * 4)
    mat = np.frombuffer(raw, dtype="<f4").reshape(count, dim).astype(np.float64)
    return ids, mat


def save_dense(index: DenseIndex, path: str | Path) -> None:
    save_vector_store(path, index.ids, index.matrix)


def load_dense(path: str | Path, metric: str = "dot") -> DenseIndex:
    ids, mat = load_vector_store(path)
    return DenseIndex(ids=ids, matrix=mat, metric=metric)


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise FormatError("truncated vector store")
    return raw
