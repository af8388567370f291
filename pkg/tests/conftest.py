from __future__ import annotations

import json
from pathlib import Path

import pytest

from normgraph.embeddings import EmbedderSpec, embed_graph
from normgraph.ingest import MODES, ChunkingPolicy, build_graph, load_manifest
from normgraph.model import InfoGraph, InfoUnit, NodeKind
from normgraph.retrieval import Indexes
from normgraph.sparse import build_sparse

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS = FIXTURES / "corpus"


@pytest.fixture(scope="session")
def corpus_manifest_path() -> Path:
    return CORPUS / "manifest.json"


@pytest.fixture(scope="session")
def corpus(corpus_manifest_path):
    return load_manifest(corpus_manifest_path)


@pytest.fixture(scope="session")
def built(corpus):
    """mode -> (graph, report) over the bundled corpus."""
    return {mode: build_graph(corpus, ChunkingPolicy.for_mode(mode), mode=mode) for mode in MODES}


@pytest.fixture(scope="session")
def index_set(built):
    spec = EmbedderSpec()
    return {
        mode: Indexes(graph, build_sparse(graph), embed_graph(spec, graph), spec)
        for mode, (graph, _) in built.items()
    }


def doc(doc_id: str, title: str | None = None) -> InfoUnit:
    return InfoUnit(doc_id, doc_id, title or doc_id.upper(), "", NodeKind.DOCUMENT)


def sec(doc_id: str, code: str, body: str = "", title: str | None = None) -> InfoUnit:
    return InfoUnit(f"{doc_id}#{code}", doc_id, title or f"{code} Section {code}", body, NodeKind.SECTION, code)


def write_corpus(root: Path, docs: dict[str, tuple[str, str, list[str]]]) -> Path:
    """docs: doc_id -> (title, text, aliases). Returns the manifest path."""
    entries = []
    for doc_id, (title, text, aliases) in docs.items():
        (root / f"{doc_id}.txt").write_text(text, encoding="utf-8")
        entries.append({"doc_id": doc_id, "title": title, "aliases": aliases, "path": f"{doc_id}.txt"})
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({"documents": entries}), encoding="utf-8")
    return manifest


@pytest.fixture
def small_graph() -> InfoGraph:
    """D <- 1 <- {1.1, 1.2}; D <- 2; E (isolated); 1.2 cites E."""
    g = InfoGraph()
    for unit in (doc("D"), sec("D", "1"), sec("D", "1.1"), sec("D", "1.2"), sec("D", "2"), doc("E")):
        g.add_node(unit)
    g.add_parthood("D#1", "D")
    g.add_parthood("D#1.1", "D#1")
    g.add_parthood("D#1.2", "D#1")
    g.add_parthood("D#2", "D")
    g.add_citation("D#1.2", "E")
    return g


@pytest.fixture
def json_server():
    """Start a local HTTP server answering POSTs with ``reply(request_json)``; yields a factory returning the URL."""
    import threading
    from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

    servers = []

    def start(reply):
        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                status, payload = reply(body, dict(self.headers))
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        servers.append(server)
        return f"http://127.0.0.1:{server.server_address[1]}/"

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()


# acceptance results, filled by test_acceptance.py and echoed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
