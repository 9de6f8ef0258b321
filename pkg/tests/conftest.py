"""Shared fixtures, stub models, and oracle helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from kgpath.graph import KnowledgeGraph, Path, serialize_path
from kgpath.similarity import HashedBagOfWordsSimilarity

# ---------------------------------------------------------------------------
# Acceptance summary: each acceptance test registers one line here and the
# terminal-summary hook prints them after the run, outside pytest's capture.
# ---------------------------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, str] = {}


def record_criterion(number: int, name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    suffix = f" — {detail}" if detail else ""
    ACCEPTANCE_RESULTS[number] = f"criterion {number} ({name}): {status}{suffix}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])


# ---------------------------------------------------------------------------
# Graph builders
# ---------------------------------------------------------------------------


def make_graph(
    triples: list[tuple[str, str, str]], labels: dict[str, str] | None = None
) -> KnowledgeGraph:
    graph = KnowledgeGraph()
    for head, relation, tail in triples:
        graph.add_triple(head, relation, tail)
    for entity_id, label in (labels or {}).items():
        graph.set_label(entity_id, label)
    return graph


def random_graph(
    rng: np.random.Generator,
    n_entities: int,
    n_relations: int,
    n_triples: int,
) -> KnowledgeGraph:
    """A random directed multigraph with word-like entity and relation names."""
    entities = [f"ent{i}" for i in range(n_entities)]
    relations = [f"rel.kind{i}" for i in range(n_relations)]
    graph = KnowledgeGraph()
    for entity in entities:
        graph.add_entity(entity)
    for _ in range(n_triples):
        head = entities[int(rng.integers(n_entities))]
        tail = entities[int(rng.integers(n_entities))]
        relation = relations[int(rng.integers(n_relations))]
        graph.add_triple(head, relation, tail)
    return graph


@pytest.fixture
def two_route_graph() -> KnowledgeGraph:
    """A topic with a 2-hop route to the answer and a 1-hop lure elsewhere.

    topic --team.plays.for--> club --club.based.in--> answerland
    topic --person.citizen.of--> wrongland
    """
    return make_graph(
        [
            ("topic", "team.plays.for", "club"),
            ("club", "club.based.in", "answerland"),
            ("topic", "person.citizen.of", "wrongland"),
        ],
        labels={"topic": "alex stone", "answerland": "answer land"},
    )


# ---------------------------------------------------------------------------
# Stub models
# ---------------------------------------------------------------------------


class PresetSimilarity:
    """Similarity backend returning fixed vectors for known texts.

    Unknown texts raise, so a fixture that drifts from the code under test
    fails loudly instead of silently scoring zero.
    """

    backend_id = "preset"

    def __init__(self, vectors: dict[str, tuple[float, ...]]):
        self._vectors = dict(vectors)
        self.dim = len(next(iter(vectors.values())))

    def embed(self, text: str) -> np.ndarray:
        if text not in self._vectors:
            raise KeyError(f"no preset vector for text: {text!r}")
        return np.asarray(self._vectors[text], dtype=np.float64)

    def manifest_info(self) -> dict:
        return {"backend": self.backend_id, "dim": self.dim}


class PresetScorer:
    """Path scorer returning fixed scores for known (serialized) texts."""

    def __init__(self, scores: dict[str, float]):
        self._scores = dict(scores)

    def score_text(self, query: str, path_text: str) -> float:
        if path_text not in self._scores:
            raise KeyError(f"no preset score for path text: {path_text!r}")
        return self._scores[path_text]

    def score_many(self, query: str, path_texts) -> list[float]:
        return [self.score_text(query, text) for text in path_texts]


class ExplodingScorer:
    """Scorer that must not be called; used to prove scoring was skipped."""

    def score_text(self, query: str, path_text: str) -> float:
        raise AssertionError("scorer was called unexpectedly")

    def score_many(self, query: str, path_texts) -> list[float]:
        raise AssertionError("scorer was called unexpectedly")


@pytest.fixture
def ref_model() -> HashedBagOfWordsSimilarity:
    return HashedBagOfWordsSimilarity()


def hash_collision_free(model: HashedBagOfWordsSimilarity, tokens: set[str]) -> bool:
    """Whether the tokens map to distinct buckets under the reference hash."""
    return len({model._bucket(token) for token in tokens}) == len(tokens)


def assert_collision_free(model: HashedBagOfWordsSimilarity, tokens: set[str]) -> None:
    """Guard: the hand-computed set oracles below assume injective hashing."""
    assert hash_collision_free(model, tokens), f"hash collision within {sorted(tokens)}"


# ---------------------------------------------------------------------------
# Exhaustive path-search oracle (used by unit and acceptance tests)
# ---------------------------------------------------------------------------


def exhaustive_finished_paths(
    graph: KnowledgeGraph, query: str, topics, scorer, max_hop: int
) -> list[tuple[Path, float]]:
    """Every finished path with the score beam search would assign it.

    Each finished path carries the score of its terminated serialization —
    its relation sequence with the end-of-path sentinel appended. Paths
    shorter than ``max_hop`` keep the sentinel in their returned form;
    paths at the hop limit are returned bare. With a beam width at least
    the relation branching plus one, beam search must return exactly this
    set.
    """
    labels = graph.labels
    finished: list[tuple[Path, float]] = []

    def walk(entity: str, path: Path) -> None:
        if path.hop_count >= max_hop:
            text = serialize_path(path.with_eop(), labels)
            finished.append((path, scorer.score_text(query, text)))
            return
        terminated = path.with_eop()
        finished.append(
            (terminated, scorer.score_text(query, serialize_path(terminated, labels)))
        )
        for relation in sorted(graph._adjacency.get(entity, {})):
            for tail_entity in sorted(graph._adjacency[entity][relation]):
                walk(tail_entity, path.with_hop(relation, tail_entity))

    for topic in sorted(set(topics)):
        walk(topic, Path(topic))
    return finished


def total_order_key(labels):
    """A strict total order on (path, score) pairs for set-wise comparison."""

    def key(pair):
        path, score = pair
        grounding = tuple(e or "" for _, e in path.hops)
        return (-score, serialize_path(path, labels), grounding)

    return key
