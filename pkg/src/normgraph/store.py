"""Index directory layout, validation and atomic writes."""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .embeddings import EmbedderSpec, EmbeddingMatrix, spec_from_meta
from .ingest import CorpusManifest, IngestReport, load_manifest
from .model import InfoGraph
from .retrieval import Indexes
from .sparse import SparseIndex

FORMAT_VERSION = 1
MANIFEST_NAME = "index.json"
DATA_FILES = ("graph.json", "bm25.json", "embeddings.bin", "embeddings_meta.json", "ingest_report.json")


class IndexStoreError(Exception):
    """Base class for index-directory problems; ``code`` is the CLI exit status."""

    code = 4


class MissingIndexError(IndexStoreError):
    code = 4


class VersionMismatchError(IndexStoreError):
    code = 5


class StaleIndexError(IndexStoreError):
    code = 6


@dataclass(frozen=True)
class IndexManifest:
    version: int
    mode: str
    files: tuple[str, ...]
    created_at: str
    corpus_manifest_hash: str
    corpus_manifest_path: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "version": self.version,
            "mode": self.mode,
            "files": list(self.files),
            "created_at": self.created_at,
            "corpus_manifest_hash": self.corpus_manifest_hash,
            "corpus_manifest_path": self.corpus_manifest_path,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "IndexManifest":
        return cls(
            version=int(data["version"]),
            mode=data["mode"],
            files=tuple(data["files"]),
            created_at=data.get("created_at", ""),
            corpus_manifest_hash=data.get("corpus_manifest_hash", ""),
            corpus_manifest_path=data.get("corpus_manifest_path"),
        )


def write_index(out_dir: str | Path, graph: InfoGraph, sparse: SparseIndex, matrix: EmbeddingMatrix,
                report: IngestReport, corpus: CorpusManifest, mode: str) -> Path:
    """Write every file into a sibling temp dir, then swap it into place."""
    out = Path(out_dir).resolve()
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        graph.save(tmp / "graph.json")
        sparse.save(tmp / "bm25.json")
        matrix.save(tmp / "embeddings.bin", tmp / "embeddings_meta.json")
        (tmp / "ingest_report.json").write_text(json.dumps(report.to_json_dict(), indent=1) + "\n", encoding="utf-8")
        manifest = IndexManifest(
            FORMAT_VERSION, mode, DATA_FILES,
            datetime.now(timezone.utc).isoformat(timespec="seconds"),
            corpus.fingerprint(),
            str(corpus.source) if corpus.source else None,
        )
        (tmp / MANIFEST_NAME).write_text(json.dumps(manifest.to_json_dict(), indent=1) + "\n", encoding="utf-8")
        _swap_in(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out


def replace_embeddings(index_dir: str | Path, matrix: EmbeddingMatrix) -> None:
    """Rewrite the vector store of an existing index by atomic directory swap."""
    src = Path(index_dir).resolve()
    tmp = Path(tempfile.mkdtemp(prefix=f".{src.name}.", dir=src.parent))
    try:
        for item in src.iterdir():
            if item.is_file():
                shutil.copy2(item, tmp / item.name)
        matrix.save(tmp / "embeddings.bin", tmp / "embeddings_meta.json")
        _swap_in(tmp, src)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _swap_in(tmp: Path, out: Path) -> None:
    if out.exists():
        old = out.with_name(f".{out.name}.old.{os.getpid()}")
        os.replace(out, old)
        os.replace(tmp, out)
        shutil.rmtree(old, ignore_errors=True)
    else:
        os.replace(tmp, out)


def read_index_manifest(index_dir: str | Path) -> IndexManifest:
    path = Path(index_dir) / MANIFEST_NAME
    if not path.exists():
        raise MissingIndexError(f"{index_dir}: not an index directory (no {MANIFEST_NAME})")
    manifest = IndexManifest.from_json_dict(json.loads(path.read_text(encoding="utf-8")))
    if manifest.version != FORMAT_VERSION:
        raise VersionMismatchError(f"{index_dir}: index format {manifest.version}, this build reads {FORMAT_VERSION}")
    missing = [f for f in manifest.files if not (Path(index_dir) / f).exists()]
    if missing:
        raise MissingIndexError(f"{index_dir}: missing {', '.join(missing)}")
    return manifest


def check_fresh(manifest: IndexManifest, index_dir: str | Path) -> None:
    if not manifest.corpus_manifest_path:
        return
    source = Path(manifest.corpus_manifest_path)
    if not source.exists():
        raise StaleIndexError(f"{index_dir}: corpus manifest {source} no longer exists")
    current = load_manifest(source).fingerprint()
    if current != manifest.corpus_manifest_hash:
        raise StaleIndexError(f"{index_dir}: corpus changed since the index was built; re-run ingest")


@dataclass
class LoadedIndex:
    path: Path
    manifest: IndexManifest
    indexes: Indexes


def load_index(index_dir: str | Path, check_stale: bool = True, endpoint: str | None = None) -> LoadedIndex:
    index_dir = Path(index_dir)
    manifest = read_index_manifest(index_dir)
    if check_stale:
        check_fresh(manifest, index_dir)
    graph = InfoGraph.load(index_dir / "graph.json")
    sparse = SparseIndex.load(index_dir / "bm25.json")
    matrix = EmbeddingMatrix.load(index_dir / "embeddings.bin", index_dir / "embeddings_meta.json")
    meta = json.loads((index_dir / "embeddings_meta.json").read_text(encoding="utf-8"))
    spec: EmbedderSpec = spec_from_meta(meta, matrix.dim, endpoint)
    indexes = Indexes(graph, sparse, matrix, spec)
    indexes.check()
    return LoadedIndex(index_dir, manifest, indexes)
