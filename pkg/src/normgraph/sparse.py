"""Okapi BM25 inverted index used as the lexical prefilter."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .model import InfoGraph, NodeId

_WORD_RE = re.compile(r"[^\W_]+")
_CODE_RE = re.compile(r"[A-Za-z](?:\.[0-9]+)+|[0-9]+(?:\.[0-9]+)+")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric runs, plus each dotted clause code as one extra term.

    >>> tokenize("Clause 7.2")
    ['clause', '7', '2', '7.2']
    """
    tokens = _WORD_RE.findall(text.lower())
    tokens.extend(m.group(0).lower() for m in _CODE_RE.finditer(text))
    return tokens


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.5
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0 <= self.b <= 1:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


def idf(n_docs: int, df: int) -> float:
    # +1 inside the log keeps IDF positive even when df == N
    return math.log((n_docs - df + 0.5) / (df + 0.5) + 1.0)


@dataclass
class SparseIndex:
    params: Bm25Params
    doc_lengths: list[int]
    postings: dict[str, list[tuple[int, int]]]
    avg_doc_length: float = 0.0
    node_ids: list[NodeId] = field(default_factory=list)
    _tf: list[dict[str, int]] | None = field(default=None, repr=False)

    @property
    def node_count(self) -> int:
        return len(self.doc_lengths)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        return idf(self.node_count, self.df(term))

    def term_frequency(self, term: str, ordinal: int) -> int:
        if self._tf is None:
            tf: list[dict[str, int]] = [{} for _ in range(self.node_count)]
            for t, plist in self.postings.items():
                for o, f in plist:
                    tf[o][t] = f
            self._tf = tf
        return self._tf[ordinal].get(term, 0)

    def _term_weight(self, term_idf: float, tf: int, ordinal: int) -> float:
        k1, b = self.params.k1, self.params.b
        if self.avg_doc_length > 0:
            norm = 1 - b + b * self.doc_lengths[ordinal] / self.avg_doc_length
        else:
            norm = 1.0
        return term_idf * tf * (k1 + 1) / (tf + k1 * norm)

    def to_json_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "avg_doc_length": self.avg_doc_length,
            "doc_lengths": self.doc_lengths,
            "node_ids": self.node_ids,
            "postings": {t: [list(p) for p in plist] for t, plist in self.postings.items()},
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SparseIndex":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            params=Bm25Params(**data["params"]),
            doc_lengths=list(data["doc_lengths"]),
            postings={t: [(o, f) for o, f in plist] for t, plist in data["postings"].items()},
            avg_doc_length=data["avg_doc_length"],
            node_ids=list(data.get("node_ids", ())),
        )


def build_sparse_from_texts(texts: list[str], params: Bm25Params | None = None,
                            node_ids: list[NodeId] | None = None) -> SparseIndex:
    params = params or Bm25Params()
    postings: dict[str, list[tuple[int, int]]] = {}
    lengths: list[int] = []
    for ordinal, text in enumerate(texts):
        terms = tokenize(text)
        lengths.append(len(terms))
        for term, tf in sorted(Counter(terms).items()):
            postings.setdefault(term, []).append((ordinal, tf))
    avg = sum(lengths) / len(lengths) if lengths else 0.0
    return SparseIndex(params, lengths, dict(sorted(postings.items())), avg, list(node_ids or []))


def build_sparse(graph: InfoGraph, params: Bm25Params | None = None) -> SparseIndex:
    """Index every node's title and body, in canonical node order."""
    units = list(graph)
    return build_sparse_from_texts([u.text for u in units], params, [u.id for u in units])


def bm25_score(index: SparseIndex, query_terms: list[str], ordinal: int) -> float:
    score = 0.0
    for term in query_terms:
        tf = index.term_frequency(term, ordinal)
        if tf:
            score += index._term_weight(index.idf(term), tf, ordinal)
    return score


def score_all(index: SparseIndex, query_terms: list[str]) -> dict[int, float]:
    """Term-at-a-time accumulation over postings; only nodes with a hit appear."""
    scores: dict[int, float] = {}
    for term in query_terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        term_idf = index.idf(term)
        for ordinal, tf in plist:
            scores[ordinal] = scores.get(ordinal, 0.0) + index._term_weight(term_idf, tf, ordinal)
    return scores


def prefilter(index: SparseIndex, query_text: str, n: int) -> list[tuple[int, float]]:
    """Top-``n`` (ordinal, score) pairs, score descending, ties by ordinal."""
    if n < 1:
        raise ValueError("n must be >= 1")
    scores = score_all(index, tokenize(query_text))
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:n]
