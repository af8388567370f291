"""Dense node embeddings, neighbor smoothing and the on-disk vector store."""

from __future__ import annotations

import json
import logging
import os
import struct
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import InfoGraph
from .sparse import tokenize

logger = logging.getLogger(__name__)

MAGIC = b"NGEM"
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

DEFAULT_DIM = 384
EMBED_TOKEN_ENV = "NORMGRAPH_EMBED_TOKEN"


class EmbeddingError(Exception):
    pass


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class EmbedderSpec:
    backend: str = "deterministic_local"  # or "remote_http"
    model_name: str = "fnv1a-hashing"
    dim: int = DEFAULT_DIM
    endpoint: str | None = None
    timeout: float = 30.0

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dim must be > 0")
        if self.backend not in ("deterministic_local", "remote_http"):
            raise ValueError(f"unknown embedder backend {self.backend!r}")
        if self.backend == "remote_http" and not self.endpoint:
            raise ValueError("remote_http backend requires an endpoint")


def _normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    return vec / norm if norm > 0 else vec


def _hash_embed(text: str, dim: int) -> np.ndarray:
    buckets: dict[int, int] = {}
    for token in tokenize(text):
        h = fnv1a_64(token.encode("utf-8"))
        sign = -1 if h >> 63 else 1
        bucket = h % dim
        buckets[bucket] = buckets.get(bucket, 0) + sign
    vec = np.zeros(dim, dtype=np.float64)
    for bucket in sorted(buckets):
        vec[bucket] = buckets[bucket]
    return _normalize(vec)


def _remote_embed(spec: EmbedderSpec, text: str) -> np.ndarray:
    payload = json.dumps({"model": spec.model_name, "input": text}).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(EMBED_TOKEN_ENV)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    request = urllib.request.Request(spec.endpoint, data=payload, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(request, timeout=spec.timeout) as response:
            body = json.loads(response.read().decode("utf-8"))
    except (OSError, ValueError) as exc:
        raise EmbeddingError(f"embedding request failed: {exc}") from exc
    values = body.get("embedding") if isinstance(body, dict) else body
    if not isinstance(values, list) or len(values) != spec.dim:
        got = len(values) if isinstance(values, list) else type(values).__name__
        raise EmbeddingError(f"expected a vector of length {spec.dim}, got {got}")
    return _normalize(np.asarray(values, dtype=np.float64))


def embed_text(spec: EmbedderSpec, text: str) -> np.ndarray:
    if spec.backend == "deterministic_local":
        return _hash_embed(text, spec.dim)
    return _remote_embed(spec, text)


@dataclass
class EmbeddingMatrix:
    vectors: np.ndarray
    model_name: str = "fnv1a-hashing"
    backend: str = "deterministic_local"
    alpha: float | None = None
    passes: int = 0

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=1)

    @property
    def smoothed(self) -> bool:
        return self.passes > 0

    def meta(self) -> dict:
        return {
            "model_name": self.model_name,
            "backend": self.backend,
            "alpha": self.alpha,
            "passes": self.passes,
            "smoothed": self.smoothed,
        }

    def save(self, bin_path: str | Path, meta_path: str | Path | None = None) -> None:
        data = np.ascontiguousarray(self.vectors, dtype="<f4")
        with open(bin_path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", self.dim, self.count))
            fh.write(data.tobytes())
        if meta_path is not None:
            Path(meta_path).write_text(json.dumps(self.meta(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, bin_path: str | Path, meta_path: str | Path | None = None) -> "EmbeddingMatrix":
        raw = Path(bin_path).read_bytes()
        if raw[:4] != MAGIC:
            raise EmbeddingError(f"{bin_path}: bad magic {raw[:4]!r}")
        dim, count = struct.unpack("<II", raw[4:12])
        expected = 12 + 4 * dim * count
        if len(raw) != expected:
            raise EmbeddingError(f"{bin_path}: expected {expected} bytes, found {len(raw)}")
        vectors = np.frombuffer(raw, dtype="<f4", offset=12).reshape(count, dim).astype(np.float64)
        meta = {}
        if meta_path is not None and Path(meta_path).exists():
            meta = json.loads(Path(meta_path).read_text(encoding="utf-8"))
        return cls(
            vectors,
            model_name=meta.get("model_name", "fnv1a-hashing"),
            backend=meta.get("backend", "deterministic_local"),
            alpha=meta.get("alpha"),
            passes=meta.get("passes", 0),
        )


def embed_graph(spec: EmbedderSpec, graph: InfoGraph) -> EmbeddingMatrix:
    """One row per node, in canonical order; the embedded text is title + newline + body."""
    rows = np.zeros((len(graph), spec.dim), dtype=np.float64)
    for i, unit in enumerate(graph):
        try:
            rows[i] = embed_text(spec, unit.text)
        except EmbeddingError as exc:
            raise EmbeddingError(f"node {unit.id!r} ({i}/{len(graph)} embedded): {exc}") from exc
    return EmbeddingMatrix(rows, model_name=spec.model_name, backend=spec.backend)


@dataclass(frozen=True)
class SmoothingConfig:
    alpha: float = 0.5
    passes: int = 1
    # per-relation weights; a neighbor linked in several ways takes the largest
    weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")

    def weight(self, relations: set[str]) -> float:
        return max(self.weights.get(r, 1.0) for r in relations)


def smooth(matrix: EmbeddingMatrix, graph: InfoGraph, config: SmoothingConfig) -> EmbeddingMatrix:
    """Blend each vector with the (weighted) mean of its graph neighbors.

    Updates are synchronous: every node reads the previous pass.  Neighbors
    are summed in node-id order, so the result does not depend on the
    canonical node order.  Non-zero rows are renormalized after each pass.
    """
    if matrix.count != len(graph):
        raise EmbeddingError(f"matrix has {matrix.count} rows, graph has {len(graph)} nodes")
    ids = graph.node_ids
    row = {node_id: i for i, node_id in enumerate(ids)}
    plan = []
    for i, node_id in enumerate(ids):
        rels = graph.neighbor_relations(node_id)
        if not rels:
            continue
        order = sorted(rels)
        idx = np.array([row[n] for n in order])
        w = np.array([config.weight(rels[n]) for n in order], dtype=np.float64)
        plan.append((i, idx, w, w.sum()))

    alpha = config.alpha
    current = np.array(matrix.vectors, dtype=np.float64, copy=True)
    for _ in range(config.passes):
        nxt = current.copy()
        for i, idx, w, total in plan:
            if total <= 0:
                continue
            mean = (w[:, None] * current[idx]).sum(axis=0) / total
            nxt[i] = alpha * current[i] + (1 - alpha) * mean
        norms = np.linalg.norm(nxt, axis=1)
        nz = norms > 0
        nxt[nz] /= norms[nz, None]
        current = nxt
    return EmbeddingMatrix(
        current,
        model_name=matrix.model_name,
        backend=matrix.backend,
        alpha=alpha,
        passes=matrix.passes + config.passes,
    )


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def spec_from_meta(meta: dict, dim: int, endpoint: str | None = None) -> EmbedderSpec:
    return EmbedderSpec(
        backend=meta.get("backend", "deterministic_local"),
        model_name=meta.get("model_name", "fnv1a-hashing"),
        dim=dim,
        endpoint=endpoint,
    )


__all__ = [
    "EmbedderSpec",
    "EmbeddingMatrix",
    "EmbeddingError",
    "SmoothingConfig",
    "cosine_similarity",
    "embed_graph",
    "embed_text",
    "fnv1a_64",
    "smooth",
    "spec_from_meta",
]
