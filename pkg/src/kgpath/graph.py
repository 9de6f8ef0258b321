"""Directed knowledge-graph store with path queries and subgraph extraction.

The graph is immutable once built: every operation below is a read, so
concurrent use from multiple threads is safe. Traversal is forward-only;
if both directions are needed, inverse triples must be present in the
input data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
QSP_TOKEN = "[QSP]"
PSP_TOKEN = "[PSP]"
EOP_RELATION = "[EOP]"

#: Marker strings that may never appear inside entity/relation identifiers,
#: otherwise path serialization would be ambiguous.
RESERVED_MARKERS = (CLS_TOKEN, SEP_TOKEN, QSP_TOKEN, PSP_TOKEN, EOP_RELATION)


class IngestError(ValueError):
    """Raised when a triple file contains a malformed or illegal line."""


class UnknownEntityError(LookupError):
    """Raised when an operation references an entity absent from the graph."""


@dataclass(frozen=True)
class Entity:
    id: str
    label: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("entity id must be non-empty")


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str


@dataclass(frozen=True)
class Path:
    """An alternating entity/relation walk rooted at a topic entity.

    ``hops`` is a sequence of ``(relation_id, entity_id)`` pairs. The final
    hop may carry ``None`` as its entity: either the end-of-path sentinel
    ``[EOP]`` or a relation-only continuation (as produced when a mined
    negative replaces a relation without re-grounding a tail entity).
    """

    topic: str
    hops: tuple[tuple[str, str | None], ...] = ()

    @property
    def hop_count(self) -> int:
        """Number of hops, excluding a terminal end-of-path marker."""
        return sum(1 for rel, _ in self.hops if rel != EOP_RELATION)

    @property
    def relation_signature(self) -> tuple[str, ...]:
        """Ordered relation ids along the path, end-of-path marker excluded."""
        return tuple(rel for rel, _ in self.hops if rel != EOP_RELATION)

    @property
    def terminated(self) -> bool:
        return bool(self.hops) and self.hops[-1][0] == EOP_RELATION

    @property
    def terminal_entity(self) -> str:
        """Last grounded entity on the path (the topic for zero-hop paths)."""
        for rel, ent in reversed(self.hops):
            if ent is not None:
                return ent
        return self.topic

    def with_hop(self, relation: str, entity: str | None) -> "Path":
        if self.terminated:
            raise ValueError("cannot extend a terminated path")
        return Path(self.topic, self.hops + ((relation, entity),))

    def with_eop(self) -> "Path":
        return self.with_hop(EOP_RELATION, None)

    def prefix(self, n_hops: int) -> "Path":
        return Path(self.topic, self.hops[:n_hops])


@dataclass
class KnowledgeGraph:
    """A directed multigraph of (head, relation, tail) triples.

    The out-adjacency index is exactly the triple set regrouped by head;
    ``adjacency_entry_count`` therefore always equals ``len(triples)``.
    """

    entities: dict[str, Entity] = field(default_factory=dict)
    relations: set[str] = field(default_factory=set)
    triples: set[Triple] = field(default_factory=set)
    _adjacency: dict[str, dict[str, set[str]]] = field(default_factory=dict)

    def add_entity(self, entity_id: str, label: str | None = None) -> None:
        if entity_id not in self.entities:
            self.entities[entity_id] = Entity(entity_id, label or entity_id)

    def set_label(self, entity_id: str, label: str) -> None:
        self.entities[entity_id] = Entity(entity_id, label)

    def add_triple(self, head: str, relation: str, tail: str) -> None:
        for value in (head, relation, tail):
            _check_markers(value)
        if relation == EOP_RELATION:
            raise ValueError("the end-of-path sentinel cannot appear as a graph relation")
        self.add_entity(head)
        self.add_entity(tail)
        self.relations.add(relation)
        triple = Triple(head, relation, tail)
        if triple not in self.triples:
            self.triples.add(triple)
            self._adjacency.setdefault(head, {}).setdefault(relation, set()).add(tail)

    @property
    def adjacency_entry_count(self) -> int:
        return sum(
            len(tails) for by_rel in self._adjacency.values() for tails in by_rel.values()
        )

    @property
    def labels(self) -> dict[str, str]:
        return {eid: ent.label for eid, ent in self.entities.items()}

    def require_entity(self, entity_id: str) -> None:
        if entity_id not in self.entities:
            raise UnknownEntityError(f"unknown entity: {entity_id!r}")

    def has_triple(self, head: str, relation: str, tail: str) -> bool:
        return Triple(head, relation, tail) in self.triples

    def max_out_degree(self) -> int:
        """Largest number of outgoing triples from any single entity."""
        if not self._adjacency:
            return 0
        return max(
            sum(len(tails) for tails in by_rel.values())
            for by_rel in self._adjacency.values()
        )


def _check_markers(value: str) -> None:
    for marker in RESERVED_MARKERS:
        if marker in value:
            raise ValueError(
                f"identifier {value!r} contains the reserved marker {marker!r}"
            )


def load_graph(source: str | IO[str]) -> KnowledgeGraph:
    """Load a tab-separated ``head<TAB>relation<TAB>tail`` file into a graph.

    Lines starting with ``#`` and blank lines are skipped. A line of the
    form ``@label<TAB>entity<TAB>text`` assigns a display label instead of
    declaring a triple. Duplicate triples are collapsed. A malformed line
    raises :class:`IngestError` carrying its line number.
    """
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as handle:
            return load_graph(handle)

    graph = KnowledgeGraph()
    for lineno, raw in enumerate(source, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3 or any(not p.strip() for p in parts):
            raise IngestError(f"line {lineno}: expected 'head<TAB>relation<TAB>tail', got {line!r}")
        first, second, third = (p.strip() for p in parts)
        try:
            if first == "@label":
                _check_markers(third)
                graph.set_label(second, third)
            else:
                graph.add_triple(first, second, third)
        except ValueError as exc:
            raise IngestError(f"line {lineno}: {exc}") from exc
    return graph


def save_graph(graph: KnowledgeGraph, sink: str | IO[str]) -> None:
    """Write a graph in the format :func:`load_graph` reads, sorted."""
    if isinstance(sink, str):
        with open(sink, "w", encoding="utf-8") as handle:
            save_graph(graph, handle)
        return
    for entity_id in sorted(graph.entities):
        entity = graph.entities[entity_id]
        if entity.label != entity.id:
            sink.write(f"@label\t{entity.id}\t{entity.label}\n")
    for triple in sorted(graph.triples, key=lambda t: (t.head, t.relation, t.tail)):
        sink.write(f"{triple.head}\t{triple.relation}\t{triple.tail}\n")


def relations_of(graph: KnowledgeGraph, entity_id: str) -> set[str]:
    """Relation ids on outgoing triples of ``entity_id``."""
    graph.require_entity(entity_id)
    return set(graph._adjacency.get(entity_id, {}).keys())


def tails(graph: KnowledgeGraph, entity_id: str, relation_id: str) -> set[str]:
    """All entities ``t`` such that ``(entity_id, relation_id, t)`` is a triple."""
    graph.require_entity(entity_id)
    return set(graph._adjacency.get(entity_id, {}).get(relation_id, set()))


def shortest_paths(
    graph: KnowledgeGraph,
    topic: str,
    answers: Iterable[str],
    max_hop: int,
) -> list[Path]:
    """All minimal-length paths from ``topic`` to any answer, up to ``max_hop``.

    If the topic itself is an answer the single zero-hop path is returned.
    The result is ordered lexicographically by relation signature, then by
    the entity ids along the path, so repeated runs agree exactly.
    """
    if max_hop < 1:
        raise ValueError("max_hop must be >= 1")
    graph.require_entity(topic)
    answer_set = set(answers)
    if topic in answer_set:
        return [Path(topic)]

    # Level-by-level distances from the topic.
    dist: dict[str, int] = {topic: 0}
    frontier = [topic]
    level = 0
    while frontier and level < max_hop:
        level += 1
        next_frontier: list[str] = []
        for entity in frontier:
            for relation, tail_set in graph._adjacency.get(entity, {}).items():
                for tail_entity in tail_set:
                    if tail_entity not in dist:
                        dist[tail_entity] = level
                        next_frontier.append(tail_entity)
        frontier = next_frontier

    reachable = [a for a in answer_set if a in dist]
    if not reachable:
        return []
    target_len = min(dist[a] for a in reachable)
    targets = {a for a in reachable if dist[a] == target_len}

    # Enumerate all paths that advance one BFS level per hop and end on a
    # minimal-distance answer; such paths are exactly the shortest ones.
    paths: list[Path] = []

    def extend(path: Path, entity: str, depth: int) -> None:
        if depth == target_len:
            if entity in targets:
                paths.append(path)
            return
        for relation in sorted(graph._adjacency.get(entity, {})):
            for tail_entity in sorted(graph._adjacency[entity][relation]):
                if dist.get(tail_entity) == depth + 1:
                    extend(path.with_hop(relation, tail_entity), tail_entity, depth + 1)

    extend(Path(topic), topic, 0)
    paths.sort(key=lambda p: (p.relation_signature, tuple(e for _, e in p.hops if e)))
    return paths


def extract_subgraph(
    graph: KnowledgeGraph, topics: Iterable[str], hops: int
) -> KnowledgeGraph:
    """Induced graph of all triples reachable within ``hops`` forward hops.

    A triple is included when its head lies within ``hops - 1`` forward hops
    of some topic. Topic entities are preserved even when isolated.
    """
    if hops < 1:
        raise ValueError("hops must be >= 1")
    topic_list = sorted(set(topics))
    if not topic_list:
        raise ValueError("topics must be non-empty")
    for topic in topic_list:
        if topic not in graph.entities:
            raise UnknownEntityError(f"topic entity not in graph: {topic!r}")

    level = {t: 0 for t in topic_list}
    frontier = list(topic_list)
    depth = 0
    sub = KnowledgeGraph()
    for topic in topic_list:
        sub.add_entity(topic, graph.entities[topic].label)
    while frontier and depth < hops:
        depth += 1
        next_frontier: list[str] = []
        for entity in frontier:
            for relation, tail_set in graph._adjacency.get(entity, {}).items():
                for tail_entity in tail_set:
                    sub.add_triple(entity, relation, tail_entity)
                    if tail_entity not in level:
                        level[tail_entity] = depth
                        next_frontier.append(tail_entity)
        frontier = next_frontier
    for entity_id in sub.entities:
        sub.entities[entity_id] = Entity(entity_id, graph.entities[entity_id].label)
    return sub


def serialize_path(path: Path, labels: Mapping[str, str] | None = None) -> str:
    """Render a path as ``topic [SEP] r1 [SEP] r2 ...``.

    Only the topic (by label when a label map is given) and the relation ids
    appear; intermediate entities are omitted. The end-of-path marker is
    rendered literally.
    """
    topic = labels.get(path.topic, path.topic) if labels else path.topic
    parts = [topic]
    for relation, _ in path.hops:
        parts.append(SEP_TOKEN)
        parts.append(relation)
    return " ".join(parts)


@dataclass(frozen=True)
class ParsedPath:
    """Structural view of a serialized path: topic label and relation ids."""

    topic_label: str
    relations: tuple[str, ...]
    terminated: bool

    @property
    def relation_signature(self) -> tuple[str, ...]:
        return self.relations


def parse_serialized_path(text: str) -> ParsedPath:
    """Inverse of :func:`serialize_path` up to relation signature."""
    parts = text.split(f" {SEP_TOKEN} ")
    topic = parts[0]
    relations = parts[1:]
    terminated = bool(relations) and relations[-1] == EOP_RELATION
    if terminated:
        relations = relations[:-1]
    return ParsedPath(topic, tuple(relations), terminated)
