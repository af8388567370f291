"""Information graph: InfoUnit nodes linked by parthood and citation edges."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

logger = logging.getLogger(__name__)

NodeId = str


class GraphError(Exception):
    """Raised on invalid graph construction or lookup."""


class DuplicateNodeError(GraphError):
    def __init__(self, node_id: NodeId):
        super().__init__(f"duplicate node id: {node_id!r}")
        self.node_id = node_id


class UnknownNodeError(GraphError, KeyError):
    def __init__(self, node_id: NodeId):
        super().__init__(f"unknown node id: {node_id!r}")
        self.node_id = node_id

    def __str__(self) -> str:
        return self.args[0]


class FrozenGraphError(GraphError):
    pass


class NodeKind(str, enum.Enum):
    DOCUMENT = "document"
    SECTION = "section"
    CHUNK = "chunk"


class EdgeKind(str, enum.Enum):
    PARTHOOD = "parthood"
    CITATION = "citation"


def make_node_id(doc_id: str, section_code: str | None = None, chunk: int | None = None) -> NodeId:
    """Render ``doc``, ``doc#code``, ``doc#code/n`` or (flat chunks) ``doc#/n``."""
    if section_code is None and chunk is None:
        return doc_id
    node_id = f"{doc_id}#{section_code or ''}"
    if chunk is not None:
        node_id += f"/{chunk}"
    return node_id


@dataclass(frozen=True)
class InfoUnit:
    id: NodeId
    doc_id: str
    title: str
    body: str = ""
    kind: NodeKind = NodeKind.SECTION
    section_code: str | None = None
    is_tabular: bool = False

    def __post_init__(self):
        if self.kind is NodeKind.DOCUMENT and self.section_code is not None:
            raise GraphError(f"document node {self.id!r} cannot carry a section code")
        if self.kind is NodeKind.SECTION and self.section_code is None:
            raise GraphError(f"section node {self.id!r} requires a section code")

    @property
    def text(self) -> str:
        """Title and body as embedded and indexed."""
        return f"{self.title}\n{self.body}"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "doc_id": self.doc_id,
            "section_code": self.section_code,
            "title": self.title,
            "body": self.body,
            "kind": self.kind.value,
            "is_tabular": self.is_tabular,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InfoUnit":
        return cls(
            id=data["id"],
            doc_id=data["doc_id"],
            section_code=data.get("section_code"),
            title=data["title"],
            body=data.get("body", ""),
            kind=NodeKind(data["kind"]),
            is_tabular=bool(data.get("is_tabular", False)),
        )


@dataclass(frozen=True)
class Edge:
    source: NodeId
    target: NodeId
    kind: EdgeKind


@dataclass(frozen=True)
class Violation:
    kind: str  # "multiple-parents" | "cycle" | "dangling-edge" | "self-loop"
    nodes: tuple[NodeId, ...]
    message: str


class InfoGraph:
    """Homogeneous property graph of InfoUnits.

    Parthood is stored child -> parent, which makes the single-parent rule
    structural; a parent -> children index is kept alongside for traversal.
    Citations are directed and many-to-many.  Node insertion order is the
    canonical order used by every index built over the graph.
    """

    def __init__(self) -> None:
        self.nodes: dict[NodeId, InfoUnit] = {}
        self.parent: dict[NodeId, NodeId] = {}
        self.children: dict[NodeId, list[NodeId]] = {}
        self.cites: dict[NodeId, list[NodeId]] = {}
        self.cited_by: dict[NodeId, list[NodeId]] = {}
        self.unresolved: list[tuple[NodeId, str]] = []
        self._frozen = False
        self._ordinal: dict[NodeId, int] | None = None

    # construction

    def _check_mutable(self) -> None:
        if self._frozen:
            raise FrozenGraphError("graph is frozen")

    def add_node(self, unit: InfoUnit) -> NodeId:
        self._check_mutable()
        if unit.id in self.nodes:
            raise DuplicateNodeError(unit.id)
        self.nodes[unit.id] = unit
        return unit.id

    def replace_node(self, unit: InfoUnit) -> None:
        """Swap the payload of an existing node, keeping its position and edges."""
        self._check_mutable()
        self._require(unit.id)
        self.nodes[unit.id] = unit

    def add_parthood(self, child: NodeId, parent: NodeId) -> None:
        self._check_mutable()
        self._require(child)
        self._require(parent)
        if child == parent:
            raise GraphError(f"parthood self-loop on {child!r}")
        existing = self.parent.get(child)
        if existing is not None:
            if existing == parent:
                return
            raise GraphError(f"{child!r} already has parent {existing!r}, refusing {parent!r}")
        self.parent[child] = parent
        self.children.setdefault(parent, []).append(child)

    def add_citation(self, source: NodeId, target: NodeId) -> bool:
        """Add a directed citation; returns False if dropped (self-citation or duplicate)."""
        self._check_mutable()
        self._require(source)
        self._require(target)
        if source == target:
            logger.warning("dropping self-citation on %s", source)
            return False
        out = self.cites.setdefault(source, [])
        if target in out:
            return False
        out.append(target)
        self.cited_by.setdefault(target, []).append(source)
        return True

    def add_unresolved(self, source: NodeId, raw: str) -> None:
        self._check_mutable()
        self.unresolved.append((source, raw))

    def freeze(self) -> "InfoGraph":
        self._frozen = True
        self._ordinal = {node_id: i for i, node_id in enumerate(self.nodes)}
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    # queries

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self.nodes

    def __iter__(self) -> Iterator[InfoUnit]:
        return iter(self.nodes.values())

    def __getitem__(self, node_id: NodeId) -> InfoUnit:
        self._require(node_id)
        return self.nodes[node_id]

    def _require(self, node_id: NodeId) -> None:
        if node_id not in self.nodes:
            raise UnknownNodeError(node_id)

    @property
    def node_ids(self) -> list[NodeId]:
        return list(self.nodes)

    def ordinal(self, node_id: NodeId) -> int:
        if self._ordinal is None:
            return self.node_ids.index(node_id)
        try:
            return self._ordinal[node_id]
        except KeyError:
            raise UnknownNodeError(node_id) from None

    def roots(self) -> list[NodeId]:
        return [node_id for node_id in self.nodes if node_id not in self.parent]

    def edges(self) -> Iterator[Edge]:
        for child, parent in self.parent.items():
            yield Edge(child, parent, EdgeKind.PARTHOOD)
        for source, targets in self.cites.items():
            for target in targets:
                yield Edge(source, target, EdgeKind.CITATION)

    def edge_count(self) -> int:
        return len(self.parent) + sum(len(t) for t in self.cites.values())

    def get_children(self, node_id: NodeId) -> list[NodeId]:
        self._require(node_id)
        return list(self.children.get(node_id, ()))

    def ancestors(self, node_id: NodeId) -> list[NodeId]:
        """Parent chain from ``node_id`` up to its top-level node, excluding itself."""
        self._require(node_id)
        chain: list[NodeId] = []
        seen = {node_id}
        current = self.parent.get(node_id)
        while current is not None:
            if current in seen:
                raise GraphError(f"parthood cycle through {current!r}")
            chain.append(current)
            seen.add(current)
            current = self.parent.get(current)
        return chain

    def same_publication(self, a: NodeId, b: NodeId) -> bool:
        chain_a = {a, *self.ancestors(a)}
        return any(n in chain_a for n in (b, *self.ancestors(b)))

    def siblings(self, node_id: NodeId) -> list[NodeId]:
        self._require(node_id)
        parent = self.parent.get(node_id)
        if parent is None:
            return []
        return [c for c in self.children.get(parent, ()) if c != node_id]

    def neighbors(self, node_id: NodeId) -> set[NodeId]:
        """Parent, children, siblings, cited and citing nodes (never ``node_id``)."""
        self._require(node_id)
        result: set[NodeId] = set(self.children.get(node_id, ()))
        parent = self.parent.get(node_id)
        if parent is not None:
            result.add(parent)
            result.update(self.children.get(parent, ()))
        result.update(self.cites.get(node_id, ()))
        result.update(self.cited_by.get(node_id, ()))
        result.discard(node_id)
        return result

    def neighbor_relations(self, node_id: NodeId) -> dict[NodeId, set[str]]:
        """Neighbors keyed by id, with the relation kinds linking each one."""
        self._require(node_id)
        rel: dict[NodeId, set[str]] = {}
        parent = self.parent.get(node_id)
        if parent is not None:
            rel.setdefault(parent, set()).add("parent")
            for sib in self.children.get(parent, ()):
                rel.setdefault(sib, set()).add("sibling")
        for child in self.children.get(node_id, ()):
            rel.setdefault(child, set()).add("child")
        for other in (*self.cites.get(node_id, ()), *self.cited_by.get(node_id, ())):
            rel.setdefault(other, set()).add("citation")
        rel.pop(node_id, None)
        return rel

    def degree(self, node_id: NodeId) -> int:
        return len(self.neighbors(node_id))

    def validate(self) -> list[Violation]:
        violations: list[Violation] = []
        for child, parent in self.parent.items():
            if child not in self.nodes or parent not in self.nodes:
                violations.append(
                    Violation("dangling-edge", (child, parent), f"parthood {child!r} -> {parent!r} references a missing node")
                )
            if child == parent:
                violations.append(Violation("self-loop", (child,), f"parthood self-loop on {child!r}"))
        for parent, kids in self.children.items():
            for kid in kids:
                if self.parent.get(kid) != parent:
                    violations.append(
                        Violation("multiple-parents", (kid,), f"{kid!r} listed under {parent!r} but its parent is {self.parent.get(kid)!r}")
                    )
        for source, targets in self.cites.items():
            for target in targets:
                if source not in self.nodes or target not in self.nodes:
                    violations.append(
                        Violation("dangling-edge", (source, target), f"citation {source!r} -> {target!r} references a missing node")
                    )
        violations.extend(self._cycles())
        return violations

    def _cycles(self) -> list[Violation]:
        found: list[Violation] = []
        state: dict[NodeId, int] = {}  # 1 = on current path, 2 = done
        for start in self.parent:
            if state.get(start):
                continue
            path: list[NodeId] = []
            node: NodeId | None = start
            while node is not None and not state.get(node):
                state[node] = 1
                path.append(node)
                node = self.parent.get(node)
            if node is not None and state.get(node) == 1:
                cycle = tuple(path[path.index(node):])
                found.append(Violation("cycle", cycle, "parthood cycle: " + " -> ".join(cycle + (node,))))
            for n in path:
                state[n] = 2
        return found

    def full_text(self) -> str:
        return "\n".join(unit.text for unit in self.nodes.values())

    # serialization

    def to_json_dict(self) -> dict:
        return {
            "nodes": [unit.to_dict() for unit in self.nodes.values()],
            "parthood": [[child, parent] for child, parent in self.parent.items()],
            "citations": [[s, t] for s, targets in self.cites.items() for t in targets],
            "unresolved": [[node, raw] for node, raw in self.unresolved],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict(), ensure_ascii=False, indent=1) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_json_dict(cls, data: dict, freeze: bool = True) -> "InfoGraph":
        graph = cls()
        for raw in data["nodes"]:
            graph.add_node(InfoUnit.from_dict(raw))
        for child, parent in data.get("parthood", ()):
            graph.add_parthood(child, parent)
        for source, target in data.get("citations", ()):
            graph.add_citation(source, target)
        for node, raw in data.get("unresolved", ()):
            graph.add_unresolved(node, raw)
        return graph.freeze() if freeze else graph

    @classmethod
    def load(cls, path: str | Path) -> "InfoGraph":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_graph_from(units: Iterable[InfoUnit], parthood: Iterable[tuple[NodeId, NodeId]] = (),
                     citations: Iterable[tuple[NodeId, NodeId]] = ()) -> InfoGraph:
    """Convenience constructor used by tests and fixtures."""
    graph = InfoGraph()
    for unit in units:
        graph.add_node(unit)
    for child, parent in parthood:
        graph.add_parthood(child, parent)
    for source, target in citations:
        graph.add_citation(source, target)
    return graph
