"""Command-line entry point: ingest / embed / query / synth-qa / evaluate.

Exit codes:
    0  success
    1  unexpected failure
    2  usage error (argparse)
    3  ingestion failed (nothing written)
    4  index directory missing or incomplete
    5  index format version mismatch
    6  stale index (corpus changed since ingest)
    7  malformed configuration
    8  some evaluation cells failed (only with --strict)
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .embeddings import EmbedderSpec, SmoothingConfig, embed_graph, smooth
from .evaluation import DEFAULT_CONFIGS, DEFAULT_KS, load_sweep_configs, run_sweep, write_reports
from .ingest import MODES, ChunkingPolicy, IngestError, build_graph, load_manifest
from .qa import RemoteLLMBackend, SynthesisConfig, filter_valid_pairs, read_jsonl, synthesize_dataset, write_jsonl
from .retrieval import PipelineConfig, run_pipeline
from .sparse import Bm25Params, build_sparse
from .store import IndexStoreError, load_index, read_index_manifest, replace_embeddings, write_index

logger = logging.getLogger("normgraph")

EXIT_OK, EXIT_FAIL, EXIT_INGEST, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 3, 7, 8


class ConfigError(Exception):
    pass


def _threads(n: int) -> int:
    return n if n > 0 else (os.cpu_count() or 1)


def _emit_error(kind: str, message: str, code: int, **extra) -> int:
    payload = {"error": kind, "message": message, "exit_code": code, **extra}
    print(json.dumps(payload, ensure_ascii=False), file=sys.stderr)
    return code


def _embedder_from_args(args) -> EmbedderSpec:
    return EmbedderSpec(
        backend=args.embed_backend, model_name=args.embed_model, dim=args.dim, endpoint=args.embed_endpoint
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    try:
        corpus = load_manifest(args.manifest)
        policy = ChunkingPolicy.for_mode(args.mode, args.max_words)
        graph, report = build_graph(corpus, policy, mode=args.mode)
    except (IngestError, ValueError) as exc:
        return _emit_error("ingest", str(exc), EXIT_INGEST)
    if report.errors and not args.allow_partial:
        return _emit_error("ingest", "some documents failed to ingest", EXIT_INGEST, documents=report.errors)
    violations = graph.validate()
    if violations:
        return _emit_error("ingest", "graph validation failed", EXIT_INGEST,
                           violations=[v.message for v in violations[:20]])
    sparse = build_sparse(graph, Bm25Params(args.k1, args.b))
    matrix = embed_graph(_embedder_from_args(args), graph)
    if args.smooth:
        matrix = smooth(matrix, graph, SmoothingConfig(args.alpha, args.passes))
    out = write_index(args.out, graph, sparse, matrix, report, corpus, args.mode)
    logger.info("wrote %s: %d nodes, %d edges, %d unresolved mentions",
                out, len(graph), graph.edge_count(), len(graph.unresolved))
    if args.json:
        print(json.dumps(report.to_json_dict(), indent=1))
    return EXIT_OK


def cmd_embed(args) -> int:
    loaded = load_index(args.index, check_stale=not args.no_stale_check, endpoint=args.embed_endpoint)
    ix = loaded.indexes
    spec = EmbedderSpec(ix.embedder.backend, ix.embedder.model_name, ix.embedder.dim, args.embed_endpoint)
    matrix = embed_graph(spec, ix.graph)
    if args.smooth:
        matrix = smooth(matrix, ix.graph, SmoothingConfig(args.alpha, args.passes))
    replace_embeddings(loaded.path, matrix)
    logger.info("re-embedded %d nodes in %s (smoothed=%s)", matrix.count, loaded.path, matrix.smoothed)
    return EXIT_OK


def _load_pipeline_config(path: str | None, k: int | None, prefilter_n: int | None) -> PipelineConfig:
    data: dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read pipeline config {path}: {exc}") from exc
    if k is not None:
        data["k_final"] = k
    if prefilter_n is not None:
        data["prefilter_n"] = prefilter_n
    try:
        return PipelineConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid pipeline config: {exc}") from exc


def _snippet(body: str, width: int = 200) -> str:
    text = " ".join(body.split())
    return text if len(text) <= width else text[: width - 3] + "..."


def cmd_query(args) -> int:
    config = _load_pipeline_config(args.config, args.k, args.prefilter_n)
    loaded = load_index(args.index, check_stale=not args.no_stale_check, endpoint=args.embed_endpoint)
    graph = loaded.indexes.graph
    result = run_pipeline(args.text, loaded.indexes, config)
    entries = []
    for node_id, score in result.final:
        unit = graph[node_id]
        entries.append({
            "node_id": node_id,
            "score": score,
            "doc_id": unit.doc_id,
            "section_code": unit.section_code,
            "title": unit.title,
            "snippet": _snippet(unit.body),
        })
    payload = {
        "query": args.text,
        "entries": entries,
        "trace": {stage: ranked.to_json() for stage, ranked in result.trace.items()},
    }
    if args.json:
        print(json.dumps(payload, ensure_ascii=False, indent=1))
    else:
        for rank, e in enumerate(entries, start=1):
            print(f"{rank:>3}  {e['score']:.4f}  {e['node_id']}  {e['title']}")
    return EXIT_OK


def cmd_synth(args) -> int:
    corpus = load_manifest(args.manifest)
    try:
        config = SynthesisConfig(
            chunk_max_tokens=args.chunk_max_tokens, min_words=args.min_words, min_word_chars=args.min_word_chars,
            min_modals=args.min_modals, sample_n=args.n, backend=args.backend, seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    backend = None
    if args.backend == "remote_llm":
        if not args.endpoint:
            raise ConfigError("--backend remote_llm requires --endpoint")
        backend = RemoteLLMBackend(args.endpoint)
    pairs = synthesize_dataset(corpus, config, backend, max_in_flight=args.max_in_flight)
    write_jsonl(pairs, args.out)
    meta = {"n_requested": args.n, "n_generated": len(pairs), "seed": args.seed, "backend": args.backend,
            "config": config.__dict__}
    Path(str(args.out) + ".meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("wrote %d pairs to %s", len(pairs), args.out)
    if args.json:
        print(json.dumps(meta, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        configs = load_sweep_configs(args.configs) if args.configs else list(DEFAULT_CONFIGS)
        ks = [int(k) for k in args.ks.split(",") if k.strip()]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid sweep configuration: {exc}") from exc
    dataset = read_jsonl(args.dataset)

    index_set = {}
    load_errors = []
    for path in [p for p in args.indexes.split(",") if p.strip()]:
        try:
            loaded = load_index(path, check_stale=not args.no_stale_check, endpoint=args.embed_endpoint)
        except IndexStoreError as exc:
            logger.error("%s", exc)
            load_errors.append({"index": path, "error": str(exc), "exit_code": exc.code})
            continue
        if loaded.manifest.mode in index_set:
            raise ConfigError(f"two indexes with mode {loaded.manifest.mode!r}")
        index_set[loaded.manifest.mode] = loaded.indexes

    if not args.no_filter_valid and index_set:
        before = len(dataset)
        dataset = filter_valid_pairs(dataset, [ix.graph.full_text() for ix in index_set.values()])
        logger.info("validity filter kept %d of %d pairs", len(dataset), before)

    result = run_sweep(dataset, index_set, configs, ks, threads=_threads(args.threads), timing=args.timing)
    result.errors[:0] = load_errors
    write_reports(result, args.out, timing=args.timing)
    if args.json:
        sys.stdout.write((Path(args.out) / "summary.csv").read_text(encoding="utf-8"))
    if result.errors:
        logger.warning("%d evaluation cells/indexes failed; see errors.json", len(result.errors))
        if args.strict:
            return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_embedder_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embed-backend", choices=("deterministic_local", "remote_http"), default="deterministic_local")
    p.add_argument("--embed-model", default="fnv1a-hashing", help="model name recorded in embeddings_meta.json")
    p.add_argument("--embed-endpoint", default=None, help="URL for the remote_http embedder")
    p.add_argument("--dim", type=int, default=384, help="embedding dimensionality")


def _add_smoothing_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--smooth", action="store_true", help="apply neighbor smoothing to stored embeddings")
    p.add_argument("--alpha", type=float, default=0.5, help="weight kept on a node's own vector (0, 1]")
    p.add_argument("--passes", type=int, default=1, help="smoothing passes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="normgraph", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=0, help="worker threads (0 = auto)")
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    # the same global flags are accepted after the subcommand; SUPPRESS keeps the top-level value otherwise
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads (0 = auto)")
    common.add_argument("--log-level", default=argparse.SUPPRESS, choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, help=help, parents=[common])

    p = add("ingest", help="build an index directory from a corpus manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="index directory to create or replace")
    p.add_argument("--mode", choices=MODES, default="structured-chunks")
    p.add_argument("--max-words", type=int, default=300)
    p.add_argument("--k1", type=float, default=1.5, help="BM25 k1")
    p.add_argument("--b", type=float, default=0.75, help="BM25 b")
    p.add_argument("--allow-partial", action="store_true", help="write the index even if some documents fail")
    p.add_argument("--json", action="store_true", help="print the ingest report to stdout")
    _add_embedder_args(p)
    _add_smoothing_args(p)
    p.set_defaults(func=cmd_ingest)

    p = add("embed", help="recompute (and optionally smooth) an index's embeddings")
    p.add_argument("--index", required=True)
    p.add_argument("--embed-endpoint", default=None)
    p.add_argument("--no-stale-check", action="store_true")
    _add_smoothing_args(p)
    p.set_defaults(func=cmd_embed)

    p = add("query", help="run one query through the retrieval pipeline")
    p.add_argument("--index", required=True)
    p.add_argument("--config", help="pipeline config JSON (PipelineConfig field names)")
    p.add_argument("--k", type=int, default=None, help="number of results (k_final)")
    p.add_argument("--prefilter-n", type=int, default=None, help="BM25 candidate count")
    p.add_argument("--text", required=True)
    p.add_argument("--embed-endpoint", default=None)
    p.add_argument("--no-stale-check", action="store_true")
    p.add_argument("--json", action="store_true", help="emit the JSON result to stdout")
    p.set_defaults(func=cmd_query)

    p = add("synth-qa", help="synthesize a Q&A benchmark from raw document text")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n", type=int, default=1000, help="number of chunks to sample")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--backend", choices=("offline", "offline_template", "remote_llm"), default="offline")
    p.add_argument("--endpoint", default=None, help="remote LLM endpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--chunk-max-tokens", type=int, default=400)
    p.add_argument("--min-words", type=int, default=40)
    p.add_argument("--min-word-chars", type=int, default=2)
    p.add_argument("--min-modals", type=int, default=1)
    p.add_argument("--max-in-flight", type=int, default=4, help="concurrent remote requests")
    p.add_argument("--json", action="store_true", help="print generation metadata to stdout")
    p.set_defaults(func=cmd_synth)

    p = add("evaluate", help="sweep retriever configurations over a Q&A dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--indexes", required=True, help="comma-separated index directories")
    p.add_argument("--configs", help="sweep config JSON; defaults to the built-in 8 configurations")
    p.add_argument("--ks", default=",".join(map(str, DEFAULT_KS)))
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--strict", action="store_true", help="non-zero exit if any cell fails")
    p.add_argument("--timing", action="store_true", help="record per-query wall-clock times")
    p.add_argument("--no-filter-valid", action="store_true", help="skip the witness validity filter")
    p.add_argument("--embed-endpoint", default=None)
    p.add_argument("--no-stale-check", action="store_true")
    p.add_argument("--json", action="store_true", help="echo summary.csv to stdout")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "backend", None) == "offline":
        args.backend = "offline_template"
    try:
        return args.func(args)
    except IndexStoreError as exc:
        return _emit_error(type(exc).__name__, str(exc), exc.code)
    except ConfigError as exc:
        return _emit_error("config", str(exc), EXIT_CONFIG)
    except IngestError as exc:
        return _emit_error("ingest", str(exc), EXIT_INGEST)


if __name__ == "__main__":
    sys.exit(main())
