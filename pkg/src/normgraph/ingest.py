"""Build an InfoGraph from pre-extracted document text.

Pipeline per document: locate headings (from the manifest ToC or by line
detection), segment bodies, link parthood by section-code extension, split
oversized non-tabular sections into chunk children.  Citation mentions are
extracted and resolved once every document is loaded.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .model import InfoGraph, InfoUnit, NodeId, NodeKind, make_node_id

logger = logging.getLogger(__name__)

MODES = ("vanilla", "structured", "structured-chunks")


class IngestError(Exception):
    """A document (or the whole manifest) could not be ingested."""


class ManifestError(IngestError):
    pass


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TocEntry:
    code: str
    title: str


@dataclass(frozen=True)
class DocumentEntry:
    doc_id: str
    title: str
    path: Path
    aliases: tuple[str, ...] = ()
    toc: tuple[TocEntry, ...] | None = None

    def read_text(self) -> str:
        try:
            return self.path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise IngestError(f"{self.doc_id}: cannot read {self.path}: {exc}") from exc


@dataclass(frozen=True)
class CorpusManifest:
    documents: tuple[DocumentEntry, ...]
    source: Path | None = None

    def names(self) -> dict[str, list[str]]:
        """Normalized title/alias -> doc ids carrying it."""
        table: dict[str, list[str]] = {}
        for doc in self.documents:
            for name in (doc.title, *doc.aliases):
                key = normalize_name(name)
                if doc.doc_id not in table.setdefault(key, []):
                    table[key].append(doc.doc_id)
        return table

    def fingerprint(self) -> str:
        """SHA-256 over the manifest and every document's bytes; detects stale indexes."""
        h = hashlib.sha256()
        if self.source is not None and self.source.exists():
            h.update(self.source.read_bytes())
        for doc in self.documents:
            h.update(doc.doc_id.encode("utf-8") + b"\0")
            try:
                h.update(doc.path.read_bytes())
            except OSError:
                h.update(b"<missing>")
        return h.hexdigest()


def normalize_name(name: str) -> str:
    return " ".join(name.split()).casefold()


def parse_manifest(data: dict, base_dir: Path | None = None, source: Path | None = None) -> CorpusManifest:
    base_dir = base_dir or Path.cwd()
    docs: list[DocumentEntry] = []
    seen_ids: set[str] = set()
    alias_owner: dict[str, str] = {}
    for raw in data.get("documents", []):
        try:
            doc_id = raw["doc_id"]
            title = raw["title"]
            path = raw["path"]
        except KeyError as exc:
            raise ManifestError(f"manifest entry missing field {exc}") from None
        if not doc_id or "#" in doc_id or "/" in doc_id:
            raise ManifestError(f"invalid doc_id {doc_id!r}")
        if doc_id in seen_ids:
            raise ManifestError(f"duplicate doc_id {doc_id!r}")
        seen_ids.add(doc_id)
        aliases = tuple(raw.get("aliases", ()))
        for alias in aliases:
            key = normalize_name(alias)
            if key in alias_owner:
                raise ManifestError(f"alias {alias!r} used by both {alias_owner[key]!r} and {doc_id!r}")
            alias_owner[key] = doc_id
        toc = raw.get("toc")
        if toc is not None:
            toc = tuple(TocEntry(str(t["code"]), t["title"]) for t in toc)
        p = Path(path)
        docs.append(DocumentEntry(doc_id, title, p if p.is_absolute() else base_dir / p, aliases, toc))
    if not docs:
        raise ManifestError("manifest lists no documents")
    return CorpusManifest(tuple(docs), source)


def load_manifest(path: str | Path) -> CorpusManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ManifestError(f"cannot load manifest {path}: {exc}") from exc
    return parse_manifest(data, path.parent, path.resolve())


# ---------------------------------------------------------------------------
# Section codes and headings
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class SectionCode:
    segments: tuple[str, ...]

    def __post_init__(self):
        if not self.segments or not all(s and s.isalnum() for s in self.segments):
            raise ValueError(f"invalid section code segments {self.segments!r}")

    @classmethod
    def parse(cls, code: str) -> "SectionCode":
        return cls(tuple(code.strip().split(".")))

    def __str__(self) -> str:
        return ".".join(self.segments)

    def __len__(self) -> int:
        return len(self.segments)


def is_parent_code(parent: SectionCode, child: SectionCode) -> bool:
    # one more dot-separated segment, not one more character: "1.2" owns "1.2.10"
    return len(child.segments) == len(parent.segments) + 1 and child.segments[:-1] == parent.segments


_HEADING_RE = re.compile(
    r"^(?P<code>[A-Z]?[0-9]+(?:\.[0-9]+)*|[A-Z](?:\.[0-9]+)*)[ \t]+(?P<title>[A-Z][^\n]*?)[ \t]*$"
)


def _next_segment(seg: str) -> str | None:
    if seg.isdigit():
        return str(int(seg) + 1)
    if len(seg) == 1 and seg.isalpha() and seg.upper() != "Z":
        return chr(ord(seg) + 1)
    return None


def _is_first_child(seg: str) -> bool:
    return seg == "1"


def plausible_successor(prev: SectionCode | None, new: SectionCode) -> bool:
    """Can ``new`` follow ``prev`` in a well-formed heading sequence?

    Accepted: first child of ``prev``; next sibling of ``prev`` or of one of
    its ancestors; the first annex ("A") after any main-body clause.
    """
    if prev is None:
        return len(new) == 1
    if is_parent_code(prev, new):
        return _is_first_child(new.segments[-1])
    if len(new) <= len(prev):
        depth = len(new) - 1
        if new.segments[:depth] != prev.segments[:depth]:
            return False
        if _next_segment(prev.segments[depth]) == new.segments[depth]:
            return True
        return len(new) == 1 and new.segments[0] == "A" and prev.segments[0].isdigit()
    return False


@dataclass(frozen=True)
class Heading:
    line_no: int
    code: SectionCode
    title: str
    line: str


def detect_headings(lines: Sequence[str]) -> list[Heading]:
    headings: list[Heading] = []
    prev: SectionCode | None = None
    for i, line in enumerate(lines):
        m = _HEADING_RE.match(line.strip())
        if not m:
            continue
        code = SectionCode.parse(m.group("code"))
        if not plausible_successor(prev, code):
            continue
        headings.append(Heading(i, code, m.group("title"), line.strip()))
        prev = code
    return headings


def locate_toc_headings(doc_id: str, lines: Sequence[str], toc: Sequence[TocEntry]) -> list[Heading]:
    headings: list[Heading] = []
    start = 0
    for entry in toc:
        wanted = normalize_name(f"{entry.code} {entry.title}")
        for i in range(start, len(lines)):
            if normalize_name(lines[i]) == wanted:
                headings.append(Heading(i, SectionCode.parse(entry.code), entry.title, " ".join(lines[i].split())))
                start = i + 1
                break
        else:
            raise IngestError(f"{doc_id}: ToC heading {entry.code} {entry.title!r} not found in text")
    return headings


_CELL_SEP_RE = re.compile(r"\t|\|| {2,}")


def is_tabular(body: str) -> bool:
    """At least half of the non-empty lines hold two or more cell separators."""
    lines = [ln for ln in body.splitlines() if ln.strip()]
    if not lines:
        return False
    rows = sum(1 for ln in lines if len(_CELL_SEP_RE.findall(ln.strip())) >= 2)
    return rows * 2 >= len(lines)


def _block(lines: Sequence[str]) -> str:
    return "\n".join(lines).strip("\n").strip()


def parse_sections(entry: DocumentEntry, text: str) -> list[InfoUnit]:
    """Document node followed by one section unit per heading, in text order.

    Text preceding the first heading, if any, becomes the document body.
    """
    lines = text.splitlines()
    if entry.toc is not None:
        headings = locate_toc_headings(entry.doc_id, lines, entry.toc)
    else:
        headings = detect_headings(lines)
    if not headings:
        raise IngestError(f"{entry.doc_id}: no section headings found (empty document)")

    seen: set[SectionCode] = set()
    units = [
        InfoUnit(
            id=make_node_id(entry.doc_id),
            doc_id=entry.doc_id,
            title=entry.title,
            body=_block(lines[: headings[0].line_no]),
            kind=NodeKind.DOCUMENT,
        )
    ]
    for n, h in enumerate(headings):
        if h.code in seen:
            raise IngestError(f"{entry.doc_id}: duplicate section code {h.code}")
        seen.add(h.code)
        end = headings[n + 1].line_no if n + 1 < len(headings) else len(lines)
        body = _block(lines[h.line_no + 1 : end])
        code = str(h.code)
        units.append(
            InfoUnit(
                id=make_node_id(entry.doc_id, code),
                doc_id=entry.doc_id,
                section_code=code,
                title=h.line,
                body=body,
                kind=NodeKind.SECTION,
                is_tabular=is_tabular(body),
            )
        )
    return units


def link_parthood(units: Sequence[InfoUnit]) -> list[tuple[NodeId, NodeId]]:
    """(child, parent) pairs: nearest preceding code-parent, else the document node."""
    doc = next(u for u in units if u.kind is NodeKind.DOCUMENT)
    pairs: list[tuple[NodeId, NodeId]] = []
    codes: list[tuple[SectionCode, NodeId]] = []
    for unit in units:
        if unit.kind is NodeKind.DOCUMENT:
            continue
        code = SectionCode.parse(unit.section_code)
        parent = doc.id
        for prev_code, prev_id in reversed(codes):
            if is_parent_code(prev_code, code):
                parent = prev_id
                break
        pairs.append((unit.id, parent))
        codes.append((code, unit.id))
    return pairs


# ---------------------------------------------------------------------------
# Chunking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChunkingPolicy:
    max_words: int = 300
    respect_structure: bool = True
    split_sections: bool = True

    def __post_init__(self):
        if self.max_words < 20:
            raise ValueError("max_words must be >= 20")

    @classmethod
    def for_mode(cls, mode: str, max_words: int = 300) -> "ChunkingPolicy":
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        return cls(max_words, respect_structure=mode != "vanilla", split_sections=mode != "structured")


def word_chunks(text: str, max_words: int) -> list[str]:
    words = text.split()
    return [" ".join(words[i : i + max_words]) for i in range(0, len(words), max_words)]


def split_oversized(unit: InfoUnit, policy: ChunkingPolicy) -> list[InfoUnit]:
    """Chunk children for a section longer than ``policy.max_words``.

    Returns [] when no split is needed.  The caller is responsible for
    emptying the parent's body once the chunks are attached.
    """
    if unit.kind is not NodeKind.SECTION or unit.is_tabular:
        return []
    if len(unit.body.split()) <= policy.max_words:
        return []
    return [
        InfoUnit(
            id=make_node_id(unit.doc_id, unit.section_code, n),
            doc_id=unit.doc_id,
            section_code=unit.section_code,
            title=f"{unit.title} (part {n})",
            body=body,
            kind=NodeKind.CHUNK,
        )
        for n, body in enumerate(word_chunks(unit.body, policy.max_words), start=1)
    ]


# ---------------------------------------------------------------------------
# Mentions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mention:
    source: NodeId
    raw: str
    doc_part: str | None = None
    section_part: str | None = None
    start: int = 0

    def __post_init__(self):
        if self.doc_part is None and self.section_part is None:
            raise ValueError("a mention needs a document part, a section part, or both")


_SECTION_MENTION_RE = re.compile(
    r"\b(?:clause|section|annex)\s+(?P<code>[A-Z]?[0-9]+(?:\.[0-9]+)*|[A-Z](?:\.[0-9]+)*)(?![\w])",
    re.IGNORECASE,
)


class MentionExtractor:
    """Finds document-name, section and combined mentions in node bodies."""

    def __init__(self, names: Iterable[str], window: int = 80,
                 section_pattern: re.Pattern[str] = _SECTION_MENTION_RE):
        self.window = window
        self.section_pattern = section_pattern
        ordered = sorted({" ".join(n.split()) for n in names if n.strip()}, key=lambda s: (-len(s), s))
        if ordered:
            alternation = "|".join(r"\s+".join(re.escape(w) for w in n.split()) for n in ordered)
            self.doc_pattern: re.Pattern[str] | None = re.compile(
                rf"(?<![\w-])(?:{alternation})(?![\w]|-\w)", re.IGNORECASE
            )
        else:
            self.doc_pattern = None

    def extract(self, unit: InfoUnit, sections: bool = True) -> list[Mention]:
        text = unit.body
        docs = list(self.doc_pattern.finditer(text)) if self.doc_pattern else []
        secs = list(self.section_pattern.finditer(text)) if sections else []
        used: set[int] = set()
        mentions: list[Mention] = []
        for d_i, d in enumerate(docs):
            next_doc = docs[d_i + 1].start() if d_i + 1 < len(docs) else len(text)
            combined = None
            for s_i, s in enumerate(secs):
                if s_i in used or s.start() < d.end():
                    continue
                if s.start() - d.end() <= self.window and s.start() < next_doc:
                    combined = s_i
                break
            if combined is not None:
                s = secs[combined]
                used.add(combined)
                mentions.append(
                    Mention(unit.id, text[d.start() : s.end()], d.group(0), s.group("code").upper(), d.start())
                )
            else:
                mentions.append(Mention(unit.id, d.group(0), doc_part=d.group(0), start=d.start()))
        for s_i, s in enumerate(secs):
            if s_i not in used:
                mentions.append(Mention(unit.id, s.group(0), section_part=s.group("code").upper(), start=s.start()))
        mentions.sort(key=lambda m: m.start)
        return mentions


def extract_mentions(unit: InfoUnit, names: Iterable[str] = (), window: int = 80) -> list[Mention]:
    return MentionExtractor(names, window).extract(unit)


def resolve_mention(graph: InfoGraph, mention: Mention, names: dict[str, list[str]],
                    sections: bool = True) -> NodeId | None:
    """Referent node for a mention, or None (recorded in ``graph.unresolved``).

    Section-only mentions are internal to the source's document.  Document
    names are matched against top-level nodes only, by normalized title or
    alias.  With ``sections=False`` section parts are ignored.
    """
    source = graph[mention.source]
    if mention.doc_part is not None:
        candidates = [d for d in names.get(normalize_name(mention.doc_part), []) if d in graph.nodes]
        candidates = [d for d in candidates if graph.nodes[d].kind is NodeKind.DOCUMENT]
        if len(candidates) != 1:
            if len(candidates) > 1:
                logger.warning("ambiguous document mention %r in %s: %s", mention.raw, mention.source, candidates)
            graph.add_unresolved(mention.source, mention.raw)
            return None
        doc_id = candidates[0]
    else:
        doc_id = source.doc_id
    if mention.section_part is None or not sections:
        return doc_id
    target = make_node_id(doc_id, mention.section_part)
    if target in graph.nodes and graph.nodes[target].kind is NodeKind.SECTION:
        return target
    graph.add_unresolved(mention.source, mention.raw)
    return None


# ---------------------------------------------------------------------------
# Whole-corpus build
# ---------------------------------------------------------------------------


@dataclass
class IngestReport:
    mode: str
    documents: int = 0
    nodes: int = 0
    parthood_edges: int = 0
    citation_edges: int = 0
    mentions: int = 0
    resolved_mentions: int = 0
    unresolved_mentions: int = 0
    errors: dict[str, str] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "documents": self.documents,
            "nodes": self.nodes,
            "edges": self.parthood_edges + self.citation_edges,
            "parthood_edges": self.parthood_edges,
            "citation_edges": self.citation_edges,
            "mentions": self.mentions,
            "resolved_mentions": self.resolved_mentions,
            "unresolved_mentions": self.unresolved_mentions,
            "errors": dict(sorted(self.errors.items())),
        }


def _structured_units(entry: DocumentEntry, text: str, policy: ChunkingPolicy):
    units = parse_sections(entry, text)
    pairs = link_parthood(units)
    out: list[InfoUnit] = []
    extra_pairs: list[tuple[NodeId, NodeId]] = []
    for unit in units:
        chunks = split_oversized(unit, policy) if policy.split_sections else []
        if chunks:
            unit = InfoUnit(unit.id, unit.doc_id, unit.title, "", unit.kind, unit.section_code, unit.is_tabular)
        out.append(unit)
        for chunk in chunks:
            out.append(chunk)
            extra_pairs.append((chunk.id, unit.id))
    return out, pairs + extra_pairs


def _vanilla_units(entry: DocumentEntry, text: str, policy: ChunkingPolicy):
    doc = InfoUnit(make_node_id(entry.doc_id), entry.doc_id, entry.title, "", NodeKind.DOCUMENT)
    units = [doc]
    pairs = []
    for n, body in enumerate(word_chunks(text, policy.max_words), start=1):
        chunk = InfoUnit(make_node_id(entry.doc_id, None, n), entry.doc_id, f"{entry.title} (part {n})", body, NodeKind.CHUNK)
        units.append(chunk)
        pairs.append((chunk.id, doc.id))
    if len(units) == 1:
        raise IngestError(f"{entry.doc_id}: document text is empty")
    return units, pairs


def build_graph(manifest: CorpusManifest, policy: ChunkingPolicy | None = None,
                mode: str | None = None, window: int = 80) -> tuple[InfoGraph, IngestReport]:
    """Parse, link, chunk and cross-reference every document in the manifest.

    Per-document failures are collected in the report; only a manifest where
    no document ingests raises.
    """
    policy = policy or ChunkingPolicy()
    if mode is None:
        mode = "vanilla" if not policy.respect_structure else ("structured-chunks" if policy.split_sections else "structured")
    report = IngestReport(mode=mode)
    graph = InfoGraph()
    for entry in manifest.documents:
        try:
            text = entry.read_text()
            if policy.respect_structure:
                units, pairs = _structured_units(entry, text, policy)
            else:
                units, pairs = _vanilla_units(entry, text, policy)
        except (IngestError, ValueError) as exc:
            logger.error("skipping %s: %s", entry.doc_id, exc)
            report.errors[entry.doc_id] = str(exc)
            continue
        for unit in units:
            graph.add_node(unit)
        for child, parent in pairs:
            graph.add_parthood(child, parent)
        report.documents += 1
    if report.documents == 0:
        raise IngestError("no documents could be ingested: " + "; ".join(f"{k}: {v}" for k, v in report.errors.items()))

    names = manifest.names()
    extractor = MentionExtractor(
        [n for doc in manifest.documents if doc.doc_id in graph.nodes for n in (doc.title, *doc.aliases)], window
    )
    sections = policy.respect_structure
    for unit in list(graph):
        for mention in extractor.extract(unit, sections=sections):
            report.mentions += 1
            target = resolve_mention(graph, mention, names, sections=sections)
            if target is None:
                report.unresolved_mentions += 1
                continue
            report.resolved_mentions += 1
            graph.add_citation(unit.id, target)

    graph.freeze()
    report.nodes = len(graph)
    report.parthood_edges = len(graph.parent)
    report.citation_edges = graph.edge_count() - len(graph.parent)
    return graph, report
