"""Retrieval evaluation: containment matching, R@K / AP@K / MRR@K, config sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .embeddings import SmoothingConfig, embed_text, smooth
from .qa import QAPair, normalize_ws
from .retrieval import Indexes, PipelineConfig, RankedList, run_pipeline

logger = logging.getLogger(__name__)

DEFAULT_KS = (4, 8, 16)


@dataclass(frozen=True)
class MatchRule:
    threshold: float = 0.75
    normalize_whitespace: bool = True

    def __post_init__(self):
        if not 0 < self.threshold <= 1:
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")

    def required_length(self, golden_len: int) -> int:
        # round first so 0.75 * 20 does not become 15.000000000000002 -> 16
        return math.ceil(round(self.threshold * golden_len, 9))


def longest_common_substring(a: str, b: str) -> int:
    """Length of the longest contiguous common substring (O(len(a) * len(b)) DP)."""
    if not a or not b:
        return 0
    best = 0
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0] * (len(b) + 1)
        for j, cb in enumerate(b, start=1):
            if ca == cb:
                v = prev[j - 1] + 1
                cur[j] = v
                if v > best:
                    best = v
        prev = cur
    return best


def chunk_matches(golden: str, retrieved: str, rule: MatchRule | None = None) -> bool:
    """True iff a contiguous span of at least ``threshold`` of ``golden`` occurs in ``retrieved``.

    Any common substring of length >= L contains one of length exactly L, so
    it is enough to slide an L-character window over ``golden``.
    """
    rule = rule or MatchRule()
    if rule.normalize_whitespace:
        golden, retrieved = normalize_ws(golden), normalize_ws(retrieved)
    if not golden:
        raise ValueError("golden chunk must be non-empty")
    if golden in retrieved:
        return True
    need = rule.required_length(len(golden))
    if need > len(retrieved):
        return False
    return any(golden[i : i + need] in retrieved for i in range(len(golden) - need + 1))


@dataclass(frozen=True)
class RelevanceVector:
    relevant: tuple[bool, ...]
    r: int
    k: int
    matched: tuple[int, ...] = ()  # claimed witness index per relevant rank, in rank order

    @property
    def first_relevant_rank(self) -> int | None:
        return next((i + 1 for i, rel in enumerate(self.relevant) if rel), None)


def relevance_vector(pair: QAPair, results: RankedList | Sequence[str], node_texts: Mapping[str, str],
                     k: int, rule: MatchRule | None = None) -> RelevanceVector:
    """Greedy claiming in rank order: each rank claims at most one unclaimed witness."""
    if k < 1:
        raise ValueError("K must be >= 1")
    rule = rule or MatchRule()
    ids = results.ids if isinstance(results, RankedList) else list(results)
    witnesses = list(pair.witnesses)
    claimed: set[int] = set()
    relevant: list[bool] = []
    matched: list[int] = []
    for node in ids[:k]:
        text = node_texts[node]
        hit = next(
            (j for j, w in enumerate(witnesses) if j not in claimed and chunk_matches(w, text, rule)),
            None,
        )
        relevant.append(hit is not None)
        if hit is not None:
            claimed.add(hit)
            matched.append(hit)
    return RelevanceVector(tuple(relevant), len(witnesses), k, tuple(matched))


def recall_at_k(rv: RelevanceVector) -> float:
    if rv.r < 1:
        raise ValueError("question has no golden chunks")
    return sum(rv.relevant) / rv.r


def ap_at_k(rv: RelevanceVector) -> float:
    denom = min(rv.r, rv.k)
    if denom < 1:
        raise ValueError("question has no golden chunks")
    hits = 0
    total = 0.0
    for rank, rel in enumerate(rv.relevant, start=1):
        if rel:
            hits += 1
            total += hits / rank
    return total / denom


def mrr_at_k(first_ranks: Sequence[int | None]) -> float:
    if not first_ranks:
        raise ValueError("MRR over an empty question set")
    return sum(1.0 / r for r in first_ranks if r) / len(first_ranks)


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    name: str
    index: str  # vanilla | structured | structured-chunks
    use_rrf: bool = False
    use_expansion: bool = False
    smoothing: SmoothingConfig | None = None
    pipeline: Mapping = field(default_factory=dict)

    def pipeline_config(self, k: int) -> PipelineConfig:
        data = dict(self.pipeline)
        data.update(use_rrf=self.use_rrf, use_expansion=self.use_expansion, k_final=k)
        return PipelineConfig.from_dict(data)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SweepConfig":
        smoothing = data.get("smoothing")
        if smoothing:
            smoothing = SmoothingConfig(**(smoothing if isinstance(smoothing, Mapping) else {}))
        return cls(
            name=data["name"],
            index=data["index"],
            use_rrf=bool(data.get("use_rrf", False)),
            use_expansion=bool(data.get("use_expansion", False)),
            smoothing=smoothing or None,
            pipeline=dict(data.get("pipeline", {})),
        )


DEFAULT_CONFIGS = (
    SweepConfig("vanilla-dense", "vanilla"),
    SweepConfig("vanilla-rrf", "vanilla", use_rrf=True),
    SweepConfig("structured-dense", "structured"),
    SweepConfig("structured-rrf", "structured", use_rrf=True),
    SweepConfig("chunks-dense", "structured-chunks"),
    SweepConfig("chunks-rrf", "structured-chunks", use_rrf=True),
    SweepConfig("chunks-smoothing", "structured-chunks", smoothing=SmoothingConfig(alpha=0.5)),
    SweepConfig("chunks-rrf-expansion", "structured-chunks", use_rrf=True, use_expansion=True),
)


def load_sweep_configs(path: str | Path) -> list[SweepConfig]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    items = data["configs"] if isinstance(data, dict) else data
    return [SweepConfig.from_dict(item) for item in items]


@dataclass
class QuestionRecord:
    question_id: str
    relevance: tuple[bool, ...]
    matched_golden: tuple[int, ...]
    first_relevant_rank: int | None
    recall: float
    ap: float
    rr: float
    retrieved: tuple[str, ...]
    query_ms: float | None = None

    def to_dict(self, timing: bool) -> dict:
        data = {
            "question_id": self.question_id,
            "relevance": list(self.relevance),
            "matched_golden": list(self.matched_golden),
            "first_relevant_rank": self.first_relevant_rank,
            "recall": self.recall,
            "ap": self.ap,
            "rr": self.rr,
            "retrieved": list(self.retrieved),
        }
        if timing:
            data["query_ms"] = self.query_ms
        return data


@dataclass
class EvalReport:
    config_name: str
    k: int
    index: str
    questions: list[QuestionRecord]

    @property
    def n_questions(self) -> int:
        return len(self.questions)

    @property
    def empty(self) -> bool:
        return not self.questions

    def _mean(self, attr: str) -> float:
        if self.empty:
            return math.nan
        return sum(getattr(q, attr) for q in self.questions) / len(self.questions)

    @property
    def recall(self) -> float:
        return self._mean("recall")

    @property
    def map(self) -> float:
        return self._mean("ap")

    @property
    def mrr(self) -> float:
        if self.empty:
            return math.nan
        return mrr_at_k([q.first_relevant_rank for q in self.questions])

    @property
    def mean_query_ms(self) -> float | None:
        times = [q.query_ms for q in self.questions if q.query_ms is not None]
        return sum(times) / len(times) if times else None

    def timing_summary(self) -> dict | None:
        times = sorted(q.query_ms for q in self.questions if q.query_ms is not None)
        if not times:
            return None
        pick = lambda p: times[min(len(times) - 1, int(p * len(times)))]  # noqa: E731
        return {"mean": sum(times) / len(times), "p50": pick(0.5), "p95": pick(0.95), "max": times[-1]}

    def to_json_dict(self, timing: bool = False) -> dict:
        guard = lambda x: None if isinstance(x, float) and math.isnan(x) else x  # noqa: E731
        data = {
            "config_name": self.config_name,
            "K": self.k,
            "index": self.index,
            "n_questions": self.n_questions,
            "empty": self.empty,
            "recall": guard(self.recall),
            "map": guard(self.map),
            "mrr": guard(self.mrr),
            "questions": [q.to_dict(timing) for q in self.questions],
        }
        if timing:
            data["timing_ms"] = self.timing_summary()
        return data


@dataclass
class SweepResult:
    reports: list[EvalReport]
    errors: list[dict]


class _IndexView:
    """Per-index caches: normalized node texts and smoothed variants."""

    def __init__(self, indexes: Indexes):
        self.indexes = indexes
        self.texts = {u.id: u.text for u in indexes.graph}
        self._smoothed: dict[tuple, Indexes] = {}

    def with_smoothing(self, config: SmoothingConfig | None) -> Indexes:
        if config is None:
            return self.indexes
        if self.indexes.matrix.smoothed:
            logger.info("index is already smoothed; using stored embeddings")
            return self.indexes
        key = (config.alpha, config.passes, tuple(sorted(config.weights.items())))
        if key not in self._smoothed:
            ix = self.indexes
            self._smoothed[key] = Indexes(ix.graph, ix.sparse, smooth(ix.matrix, ix.graph, config), ix.embedder)
        return self._smoothed[key]


def evaluate_config(dataset: Sequence[QAPair], indexes: Indexes, node_texts: Mapping[str, str],
                    config: PipelineConfig, name: str, index_name: str, rule: MatchRule | None = None,
                    threads: int = 1, timing: bool = False, query_vecs: Mapping | None = None) -> EvalReport:
    rule = rule or MatchRule()

    def one(pair: QAPair) -> QuestionRecord:
        start = time.perf_counter()
        vec = query_vecs.get(pair.question) if query_vecs else None
        result = run_pipeline(pair.question, indexes, config, query_vec=vec)
        elapsed = (time.perf_counter() - start) * 1000.0
        rv = relevance_vector(pair, result.final, node_texts, config.k_final, rule)
        first = rv.first_relevant_rank
        return QuestionRecord(
            pair.id, rv.relevant, rv.matched, first, recall_at_k(rv), ap_at_k(rv),
            1.0 / first if first else 0.0, tuple(result.final.ids), elapsed if timing else None,
        )

    pairs = sorted(dataset, key=lambda p: p.id)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            records = list(ex.map(one, pairs))
    else:
        records = [one(p) for p in pairs]
    return EvalReport(name, config.k_final, index_name, records)


def run_sweep(dataset: Sequence[QAPair], index_set: Mapping[str, Indexes],
              configs: Sequence[SweepConfig] = DEFAULT_CONFIGS, ks: Sequence[int] = DEFAULT_KS,
              rule: MatchRule | None = None, threads: int = 1, timing: bool = False) -> SweepResult:
    """Evaluate every (config, K) cell; cells whose index is missing become error records."""
    dataset = [p for p in dataset if p.witnesses]
    views = {name: _IndexView(ix) for name, ix in index_set.items()}
    query_cache: dict[tuple, dict] = {}
    reports: list[EvalReport] = []
    errors: list[dict] = []
    for cfg in configs:
        view = views.get(cfg.index)
        if view is None:
            for k in ks:
                errors.append({"config": cfg.name, "K": k, "error": f"missing index {cfg.index!r}"})
            logger.error("config %s: no index for %r", cfg.name, cfg.index)
            continue
        indexes = view.with_smoothing(cfg.smoothing)
        spec = indexes.embedder
        vecs = query_cache.get(spec)
        if vecs is None:
            vecs = {p.question: embed_text(spec, p.question) for p in dataset}
            query_cache[spec] = vecs
        for k in ks:
            try:
                pipeline = cfg.pipeline_config(k)
            except ValueError as exc:
                errors.append({"config": cfg.name, "K": k, "error": str(exc)})
                continue
            reports.append(
                evaluate_config(dataset, indexes, view.texts, pipeline, cfg.name, cfg.index, rule,
                                threads, timing, vecs)
            )
    return SweepResult(reports, errors)


SUMMARY_COLUMNS = ("config", "K", "recall", "map", "mrr", "n_questions", "mean_query_ms")


def _fmt(x: float | None) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.6f}"


def summary_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for rep in reports:
        writer.writerow([rep.config_name, rep.k, _fmt(rep.recall), _fmt(rep.map), _fmt(rep.mrr),
                         rep.n_questions, _fmt(rep.mean_query_ms)])
    return buf.getvalue()


def write_reports(result: SweepResult, out_dir: str | Path, timing: bool = False) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rep in result.reports:
        path = out / f"report_{rep.config_name}_{rep.k}.json"
        path.write_text(json.dumps(rep.to_json_dict(timing), indent=1) + "\n", encoding="utf-8")
    (out / "summary.csv").write_text(summary_csv(result.reports), encoding="utf-8")
    if result.errors:
        (out / "errors.json").write_text(json.dumps(result.errors, indent=1) + "\n", encoding="utf-8")
