"""Synthetic Q&A generation for retrieval benchmarks.

Chunking here deliberately ignores document structure: raw text is split
into flat fixed-size chunks so the benchmark stays independent of how the
indexes are built.
"""

from __future__ import annotations

import json
import logging
import os
import random
import re
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

from .ingest import CorpusManifest

logger = logging.getLogger(__name__)

MODAL_VERBS = frozenset({"shall", "must", "should", "may", "can", "will", "might", "could", "would"})
STOPWORDS = frozenset(
    """a an and are as at be by for from has have in into is it its of on or that the their
    this to was were which with within when where than then there these those such not""".split()
)
PROMPT_VERSION = "qa_prompt_v1"
LLM_TOKEN_ENV = "NORMGRAPH_LLM_TOKEN"

_MODAL_RE = re.compile(r"\b(?:" + "|".join(sorted(MODAL_VERBS)) + r")\b", re.IGNORECASE)
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])[ \t]+|\n+")
_EDGE_PUNCT = "\"'()[]{},;:.!?"


def normalize_ws(text: str) -> str:
    return " ".join(text.split())


def count_modals(text: str) -> int:
    return len(_MODAL_RE.findall(text))


@dataclass(frozen=True)
class SynthesisConfig:
    chunk_max_tokens: int = 400
    min_words: int = 40
    min_word_chars: int = 2
    min_modals: int = 1
    sample_n: int = 1000
    backend: str = "offline_template"  # or "remote_llm"
    seed: int = 7

    def __post_init__(self):
        for name in ("chunk_max_tokens", "min_words", "min_word_chars", "min_modals", "sample_n"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.backend not in ("offline_template", "remote_llm"):
            raise ValueError(f"unknown backend {self.backend!r}")


@dataclass(frozen=True)
class EvalChunk:
    doc_id: str
    ordinal: int
    text: str
    word_count: int
    modal_count: int

    @property
    def chunk_id(self) -> str:
        return f"{self.doc_id}:{self.ordinal}"


@dataclass(frozen=True)
class QAPair:
    id: str
    question: str
    answer: str
    source_doc: str
    source_chunk: str
    witnesses: tuple[str, ...]

    def to_json(self) -> str:
        data = asdict(self)
        data["witnesses"] = list(self.witnesses)
        return json.dumps(data, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict) -> "QAPair":
        return cls(
            id=str(data["id"]),
            question=data["question"],
            answer=data["answer"],
            source_doc=data["source_doc"],
            source_chunk=data["source_chunk"],
            witnesses=tuple(data["witnesses"]),
        )


def flat_chunk(doc_text: str, doc_id: str, config: SynthesisConfig) -> list[EvalChunk]:
    """Greedy split into consecutive runs of at most ``chunk_max_tokens`` whitespace tokens.

    Chunk text is the original span, so internal line breaks survive.
    """
    spans = [m.span() for m in re.finditer(r"\S+", doc_text)]
    chunks = []
    size = config.chunk_max_tokens
    for ordinal, i in enumerate(range(0, len(spans), size)):
        group = spans[i : i + size]
        text = doc_text[group[0][0] : group[-1][1]]
        chunks.append(EvalChunk(doc_id, ordinal, text, len(group), count_modals(text)))
    return chunks


def filter_chunks(chunks: Iterable[EvalChunk], config: SynthesisConfig) -> list[EvalChunk]:
    kept = []
    for chunk in chunks:
        words = sum(1 for w in chunk.text.split() if len(w) >= config.min_word_chars)
        if words >= config.min_words and chunk.modal_count >= config.min_modals:
            kept.append(chunk)
    return kept


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_SPLIT_RE.split(text) if s.strip()]


def witnesses_valid(witnesses: Sequence[str], chunk_text: str) -> bool:
    chunk = normalize_ws(chunk_text)
    return bool(witnesses) and all(normalize_ws(w) and normalize_ws(w) in chunk for w in witnesses)


class Backend(Protocol):
    def generate(self, chunk: EvalChunk) -> QAPair | None: ...


class OfflineTemplateBackend:
    """Deterministic stand-in for the LLM: quotes the first normative sentence."""

    def generate(self, chunk: EvalChunk) -> QAPair | None:
        sentence = next((s for s in split_sentences(chunk.text) if _MODAL_RE.search(s)), None)
        if sentence is None:
            logger.warning("chunk %s has no modal sentence", chunk.chunk_id)
            return None
        tokens = [t.strip(_EDGE_PUNCT) for t in sentence.split()]
        keywords = [t for t in tokens if t and t.lower() not in STOPWORDS][:8]
        question = f"According to {chunk.doc_id}, what is required regarding: {' '.join(keywords)}?"
        pair = QAPair(chunk.chunk_id, question, sentence, chunk.doc_id, chunk.text, (sentence,))
        return pair if witnesses_valid(pair.witnesses, chunk.text) else None


def load_prompt_template(version: str = PROMPT_VERSION) -> str:
    return resources.files("normgraph.prompts").joinpath(f"{version}.txt").read_text(encoding="utf-8")


def _http_post_json(endpoint: str, payload: dict, timeout: float) -> dict:
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(LLM_TOKEN_ENV)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    data = json.dumps(payload).encode("utf-8")
    request = urllib.request.Request(endpoint, data=data, headers=headers, method="POST")
    with urllib.request.urlopen(request, timeout=timeout) as response:
        return json.loads(response.read().decode("utf-8"))


class RemoteLLMBackend:
    """POSTs ``{"prompt": ...}`` and expects ``{"question", "answer", "witnesses"}`` back."""

    def __init__(self, endpoint: str, timeout: float = 60.0,
                 post: Callable[[str, dict, float], dict] | None = None, template: str | None = None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.post = post or _http_post_json
        self.template = template or load_prompt_template()

    def prompt(self, chunk: EvalChunk) -> str:
        return self.template.format(doc_id=chunk.doc_id, context=chunk.text)

    def generate(self, chunk: EvalChunk) -> QAPair | None:
        try:
            reply = self.post(self.endpoint, {"prompt": self.prompt(chunk)}, self.timeout)
            question, answer = str(reply["question"]), str(reply["answer"])
            witnesses = reply["witnesses"]
            if isinstance(witnesses, str) or not all(isinstance(w, str) for w in witnesses):
                raise ValueError("witnesses must be a list of strings")
        except (OSError, ValueError, KeyError, TypeError) as exc:
            logger.warning("generation failed for chunk %s: %s", chunk.chunk_id, exc)
            return None
        if not witnesses_valid(witnesses, chunk.text):
            logger.info("discarding pair for chunk %s: witness not found in context", chunk.chunk_id)
            return None
        return QAPair(chunk.chunk_id, question, answer, chunk.doc_id, chunk.text, tuple(witnesses))


def generate_pair(chunk: EvalChunk, backend: Backend) -> QAPair | None:
    return backend.generate(chunk)


def eligible_chunks(manifest: CorpusManifest, config: SynthesisConfig) -> list[EvalChunk]:
    chunks: list[EvalChunk] = []
    for doc in manifest.documents:
        chunks.extend(filter_chunks(flat_chunk(doc.read_text(), doc.doc_id, config), config))
    return chunks


def synthesize_dataset(manifest: CorpusManifest, config: SynthesisConfig, backend: Backend | None = None,
                       max_in_flight: int = 4) -> list[QAPair]:
    """Seeded sample (without replacement) of eligible chunks, one pair each, in sample order."""
    pool = eligible_chunks(manifest, config)
    n = config.sample_n
    if n > len(pool):
        logger.warning("only %d eligible chunks for sample_n=%d; using all", len(pool), n)
        n = len(pool)
    sample = random.Random(config.seed).sample(pool, n)
    if backend is None:
        backend = OfflineTemplateBackend()
    if isinstance(backend, OfflineTemplateBackend) or max_in_flight <= 1:
        results = [backend.generate(c) for c in sample]
    else:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool_exec:
            results = list(pool_exec.map(backend.generate, sample))
    return [pair for pair in results if pair is not None]


def filter_valid_pairs(dataset: Iterable[QAPair], index_full_texts: Sequence[str]) -> list[QAPair]:
    """Keep pairs whose every witness occurs in every index's full text."""
    texts = [normalize_ws(t) for t in index_full_texts]
    return [
        pair for pair in dataset
        if all(normalize_ws(w) in text for w in pair.witnesses for text in texts)
    ]


def write_jsonl(pairs: Iterable[QAPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            fh.write(pair.to_json() + "\n")


def read_jsonl(path: str | Path) -> list[QAPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                pairs.append(QAPair.from_dict(json.loads(line)))
    return pairs
