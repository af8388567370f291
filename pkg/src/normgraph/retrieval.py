"""Query-time pipeline: BM25 prefilter, dense re-rank, RRF, graph expansion."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .embeddings import EmbedderSpec, EmbeddingMatrix, embed_text
from .model import InfoGraph, NodeId
from .sparse import SparseIndex, prefilter


class RetrievalError(Exception):
    pass


@dataclass
class RankedList:
    entries: list[tuple[NodeId, float]] = field(default_factory=list)
    provenance: str = "sparse"  # sparse | dense | fused | expanded

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> list[NodeId]:
        return [node for node, _ in self.entries]

    def rank_of(self) -> dict[NodeId, int]:
        return {node: r for r, (node, _) in enumerate(self.entries, start=1)}

    def truncate(self, k: int) -> "RankedList":
        return RankedList(self.entries[:k], self.provenance)

    def to_json(self) -> list[list]:
        return [[node, score] for node, score in self.entries]


@dataclass(frozen=True)
class FusionConfig:
    k: float = 60.0

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("RRF k must be > 0")


@dataclass(frozen=True)
class ExpanderConfig:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.5
    max_neighbors: int = 20
    include_seeds: bool = True
    # seeds taken from the head of the incoming list; None -> ceil(k_final / 2)
    max_seeds: int | None = None

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"expander {name} must be finite and >= 0, got {value}")
        if self.max_neighbors < 0:
            raise ValueError("max_neighbors must be >= 0")


@dataclass(frozen=True)
class PipelineConfig:
    prefilter_n: int = 100
    dense_top_m: int = 50
    use_rrf: bool = True
    use_expansion: bool = False
    fusion: FusionConfig = field(default_factory=FusionConfig)
    expander: ExpanderConfig = field(default_factory=ExpanderConfig)
    k_final: int = 8

    def __post_init__(self):
        if not 1 <= self.k_final <= self.dense_top_m <= self.prefilter_n:
            raise ValueError(
                f"need 1 <= k_final ({self.k_final}) <= dense_top_m ({self.dense_top_m}) <= prefilter_n ({self.prefilter_n})"
            )

    def with_k(self, k: int) -> "PipelineConfig":
        data = asdict(self)
        data["k_final"] = k
        return PipelineConfig.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        data = dict(data)
        if "fusion" in data and not isinstance(data["fusion"], FusionConfig):
            data["fusion"] = FusionConfig(**data["fusion"])
        if "expander" in data and not isinstance(data["expander"], ExpanderConfig):
            data["expander"] = ExpanderConfig(**data["expander"])
        return cls(**data)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def _cosines(matrix: EmbeddingMatrix, rows: Iterable[int], query_vec: np.ndarray) -> np.ndarray:
    query_vec = np.asarray(query_vec, dtype=np.float64)
    if query_vec.shape != (matrix.dim,):
        raise RetrievalError(f"query dim {query_vec.shape} does not match matrix dim {matrix.dim}")
    sub = matrix.vectors[list(rows)]
    qn = float(np.linalg.norm(query_vec))
    norms = np.linalg.norm(sub, axis=1)
    dots = sub @ query_vec
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = np.where((norms > 0) & (qn > 0), dots / (norms * qn), 0.0)
    return np.clip(sims, -1.0, 1.0)


def dense_rerank(candidates: RankedList, query_vec: np.ndarray, matrix: EmbeddingMatrix,
                 m: int, graph: InfoGraph) -> RankedList:
    """Top-``m`` candidates by cosine to the query; ties keep candidate order."""
    if not candidates.entries:
        return RankedList([], "dense")
    rows = [graph.ordinal(node) for node in candidates.ids]
    sims = _cosines(matrix, rows, query_vec)
    order = sorted(range(len(rows)), key=lambda i: (-sims[i], i))[:m]
    return RankedList([(candidates.ids[i], float(sims[i])) for i in order], "dense")


def rrf_fuse(lists: list[RankedList], config: FusionConfig | None = None,
             canonical: Mapping[NodeId, int] | None = None) -> RankedList:
    """Reciprocal Rank Fusion over 1-based positions; input scores are ignored.

    Ties: higher fused score, then better best rank, then canonical order
    (first appearance across the lists when no canonical order is given).
    """
    config = config or FusionConfig()
    fused: dict[NodeId, float] = {}
    best: dict[NodeId, int] = {}
    first_seen: dict[NodeId, int] = {}
    for ranked in lists:
        for rank, (node, _) in enumerate(ranked.entries, start=1):
            fused[node] = fused.get(node, 0.0) + 1.0 / (config.k + rank)
            best[node] = min(best.get(node, rank), rank)
            first_seen.setdefault(node, len(first_seen))
    tiebreak = canonical if canonical is not None else first_seen
    order = sorted(fused, key=lambda n: (-fused[n], best[n], tiebreak[n]))
    return RankedList([(n, fused[n]) for n in order], "fused")


def expander_scores(seeds: Iterable[NodeId], graph: InfoGraph, matrix: EmbeddingMatrix,
                    query_vec: np.ndarray, config: ExpanderConfig) -> dict[NodeId, float]:
    """Hub-penalized score for every neighbor of the seed set (seeds excluded)."""
    seeds = list(dict.fromkeys(seeds))
    seed_set = set(seeds)
    seed_sims = dict(zip(seeds, _cosines(matrix, [graph.ordinal(s) for s in seeds], query_vec)))
    connection: dict[NodeId, float] = {}
    for s in seeds:
        for n in graph.neighbors(s):
            if n not in seed_set:
                connection[n] = connection.get(n, 0.0) + float(seed_sims[s])
    if not connection:
        return {}
    pool = sorted(connection, key=graph.ordinal)
    own = _cosines(matrix, [graph.ordinal(n) for n in pool], query_vec)
    return {
        n: config.alpha * connection[n] + config.beta * float(own[i]) - config.gamma * math.log1p(graph.degree(n))
        for i, n in enumerate(pool)
    }


def expand_and_rerank(seeds: RankedList, graph: InfoGraph, matrix: EmbeddingMatrix,
                      query_vec: np.ndarray, config: ExpanderConfig) -> RankedList:
    """Seeds followed by their best-scoring graph neighbors.

    With ``include_seeds`` the seeds keep their incoming scores and order and
    the neighbors are appended; otherwise everything is merged by score.
    The appended list is ordered by position, not by score.
    """
    if not seeds.entries:
        return RankedList([], "expanded")
    scores = expander_scores(seeds.ids, graph, matrix, query_vec, config)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], graph.ordinal(kv[0])))[: config.max_neighbors]
    if config.include_seeds:
        return RankedList(list(seeds.entries) + ranked, "expanded")
    prior = seeds.rank_of()
    merged = list(seeds.entries) + ranked
    merged.sort(key=lambda kv: (-kv[1], prior.get(kv[0], len(prior) + 1), graph.ordinal(kv[0])))
    return RankedList(merged, "expanded")


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass
class Indexes:
    graph: InfoGraph
    sparse: SparseIndex
    matrix: EmbeddingMatrix
    embedder: EmbedderSpec

    def check(self) -> None:
        n = len(self.graph)
        if self.sparse.node_count != n:
            raise RetrievalError(f"inconsistent indexes: graph has {n} nodes, bm25 has {self.sparse.node_count}")
        if self.matrix.count != n:
            raise RetrievalError(f"inconsistent indexes: graph has {n} nodes, embeddings have {self.matrix.count}")
        if self.matrix.dim != self.embedder.dim:
            raise RetrievalError(f"embedder dim {self.embedder.dim} != stored dim {self.matrix.dim}")
        if self.sparse.node_ids and self.sparse.node_ids != self.graph.node_ids:
            raise RetrievalError("inconsistent indexes: bm25 node order differs from graph.json")


@dataclass
class PipelineResult:
    final: RankedList
    trace: dict[str, RankedList]


def run_pipeline(query_text: str, indexes: Indexes, config: PipelineConfig,
                 query_vec: np.ndarray | None = None) -> PipelineResult:
    indexes.check()
    graph = indexes.graph
    ids = graph.node_ids
    sparse = RankedList([(ids[o], s) for o, s in prefilter(indexes.sparse, query_text, config.prefilter_n)], "sparse")
    trace = {"sparse": sparse}
    if not sparse.entries:
        return PipelineResult(RankedList([], "sparse"), trace)
    if query_vec is None:
        query_vec = embed_text(indexes.embedder, query_text)
    dense = dense_rerank(sparse, query_vec, indexes.matrix, config.dense_top_m, graph)
    trace["dense"] = dense
    current = dense
    if config.use_rrf:
        current = rrf_fuse([sparse, dense], config.fusion, canonical=_Ordinals(graph))
        trace["fused"] = current
    if config.use_expansion:
        n_seeds = config.expander.max_seeds or math.ceil(config.k_final / 2)
        seeds = current.truncate(n_seeds)
        expanded = expand_and_rerank(seeds, graph, indexes.matrix, query_vec, config.expander)
        seen = set(expanded.ids)
        tail = [(n, s) for n, s in current.entries[n_seeds:] if n not in seen]
        current = RankedList(expanded.entries + tail, "expanded")
        trace["expanded"] = current
    return PipelineResult(current.truncate(config.k_final), trace)


class _Ordinals(Mapping):
    """Read-only node -> canonical ordinal view for tie-breaking."""

    def __init__(self, graph: InfoGraph):
        self._graph = graph

    def __getitem__(self, node_id: NodeId) -> int:
        return self._graph.ordinal(node_id)

    def __iter__(self):
        return iter(self._graph.node_ids)

    def __len__(self) -> int:
        return len(self._graph)
