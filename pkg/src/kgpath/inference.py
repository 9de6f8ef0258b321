"""Best-first beam search over relation paths, plus answer generation.

Expansion pops the highest-scoring frontier item and scores every
available relation (and the end-of-path sentinel) on the serialization of
the finished path that choice would produce — the extension with the
sentinel appended — keeping the best `beam_width` of them. Selecting the
sentinel finishes a path; reaching the hop limit finishes it as-is. One
textual form is therefore scored everywhere, the same form the mined
training corpus stores.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

from .generation import GenerationResult, GeneratorClient, render_prompt
from .graph import (
    EOP_RELATION,
    KnowledgeGraph,
    Path,
    relations_of,
    serialize_path,
    tails,
)
from .mining import QueryRecord
from .scorer import CrossAttentiveScorer
from .similarity import SimilarityModel, sim


class SimilarityBeamScorer:
    """Frozen lexical baseline: path score = similarity to the query.

    Drop-in replacement for the trained scorer inside beam search; no
    parameters, no training.
    """

    def __init__(self, model: SimilarityModel):
        self.model = model

    def score_text(self, query: str, path_text: str) -> float:
        return sim(self.model, query, path_text)

    def score_many(self, query: str, path_texts: Sequence[str]) -> list[float]:
        return [self.score_text(query, text) for text in path_texts]


@dataclass(frozen=True)
class InferenceConfig:
    """Beam search and generation settings."""

    beam_width: int = 3
    top_k: int = 3
    max_hop: int = 2
    llm_client: str = "mock"
    frontier_cap: int | None = None

    def __post_init__(self) -> None:
        if self.beam_width < 1 or self.top_k < 1 or self.max_hop < 1:
            raise ValueError("beam_width, top_k, max_hop must all be >= 1")
        if self.frontier_cap is not None and self.frontier_cap < 1:
            raise ValueError("frontier_cap must be >= 1 when set")


@dataclass(frozen=True)
class ScoredBeamItem:
    """A frontier entry: where the walk stands, how it got there, its score."""

    entity: str
    path: Path
    score: float


def beam_search(
    graph: KnowledgeGraph,
    query: str,
    topics: Iterable[str],
    scorer: CrossAttentiveScorer,
    cfg: InferenceConfig,
) -> list[tuple[Path, float]]:
    """All finished paths from the topic entities, highest score first.

    Every candidate is scored on the serialization of the finished path it
    would produce: the current path plus the chosen relation, terminated by
    the end-of-path sentinel. Paths that choose the sentinel keep it in
    their returned form; paths cut off at the hop limit are returned bare
    but carry the same terminated-form score from their final extension.
    Ties order lexicographically by serialization.
    """
    topic_list = sorted(set(topics))
    if not topic_list:
        raise ValueError("topics must be non-empty")
    for topic in topic_list:
        graph.require_entity(topic)

    labels = graph.labels
    counter = 0
    queue: list[tuple[float, str, int, ScoredBeamItem]] = []

    def push(item: ScoredBeamItem) -> None:
        nonlocal counter
        heapq.heappush(
            queue, (-item.score, serialize_path(item.path, labels), counter, item)
        )
        counter += 1

    for topic in topic_list:
        bare = Path(topic)
        score = scorer.score_text(query, serialize_path(bare.with_eop(), labels))
        push(ScoredBeamItem(topic, bare, score))

    finished: list[tuple[Path, float]] = []
    level_counts: dict[tuple[str, int], int] = {}
    while queue:
        _, _, _, item = heapq.heappop(queue)
        if item.path.hop_count >= cfg.max_hop:
            finished.append((item.path, item.score))
            continue
        candidates = sorted(relations_of(graph, item.entity)) + [EOP_RELATION]
        extended = [item.path.with_hop(rel, None) for rel in candidates]
        texts = [
            serialize_path(p if p.terminated else p.with_eop(), labels)
            for p in extended
        ]
        scores = scorer.score_many(query, texts)
        ranked = sorted(
            zip(candidates, scores), key=lambda rs: (-rs[1], rs[0])
        )[: cfg.beam_width]
        for relation, score in ranked:
            if relation == EOP_RELATION:
                finished.append((item.path.with_eop(), score))
                continue
            level = item.path.hop_count + 1
            for tail_entity in sorted(tails(graph, item.entity, relation)):
                if cfg.frontier_cap is not None:
                    key = (item.path.topic, level)
                    if level_counts.get(key, 0) >= cfg.frontier_cap:
                        continue
                    level_counts[key] = level_counts.get(key, 0) + 1
                push(
                    ScoredBeamItem(
                        tail_entity, item.path.with_hop(relation, tail_entity), score
                    )
                )

    finished.sort(key=lambda ps: (-ps[1], serialize_path(ps[0], labels)))
    return finished


def topk_scored(
    finished: Sequence[tuple[Path, float]], k: int
) -> list[tuple[Path, float]]:
    """Top-k finished paths with scores, duplicates collapsed.

    Two paths are duplicates when they share topic, relation signature,
    and terminal entity; the higher-scoring copy survives.
    """
    if not finished:
        raise ValueError("no finished paths to select from")
    best: dict[tuple, tuple[Path, float]] = {}
    for path, score in finished:
        key = (path.topic, path.relation_signature, path.terminal_entity)
        if key not in best or score > best[key][1]:
            best[key] = (path, score)
    ranked = sorted(
        best.values(), key=lambda ps: (-ps[1], serialize_path(ps[0]))
    )
    return ranked[:k]


def topk_select(finished: Sequence[tuple[Path, float]], k: int) -> list[Path]:
    return [path for path, _ in topk_scored(finished, k)]


def generate_answer(
    client: GeneratorClient,
    question: str,
    paths: Sequence[Path],
    labels: dict[str, str],
) -> GenerationResult:
    """Prompt the generator with the candidate paths and return its answer."""
    if not paths:
        raise ValueError("paths must be non-empty")
    lines = [
        (
            serialize_path(path, labels),
            labels.get(path.terminal_entity, path.terminal_entity),
        )
        for path in paths
    ]
    prompt = render_prompt(question, lines)
    started = time.perf_counter()
    answer = client.complete(prompt)
    return GenerationResult(
        answer=answer,
        supporting_paths=tuple(text for text, _ in lines),
        latency_seconds=time.perf_counter() - started,
    )


def retrieve_and_answer(
    graph: KnowledgeGraph,
    record: QueryRecord,
    scorer: CrossAttentiveScorer,
    client: GeneratorClient,
    cfg: InferenceConfig,
) -> tuple[GenerationResult, list[tuple[Path, float]], float]:
    """Beam search, top-k selection, then generation for one query.

    Returns the generation result, the selected (path, score) pairs, and
    the retrieval wall time (search + selection only, generation excluded).
    """
    started = time.perf_counter()
    finished = beam_search(graph, record.question, record.topic_entities, scorer, cfg)
    selected = topk_scored(finished, cfg.top_k)
    retrieval_seconds = time.perf_counter() - started
    result = generate_answer(
        client, record.question, [p for p, _ in selected], graph.labels
    )
    return result, selected, retrieval_seconds
