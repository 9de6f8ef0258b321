"""Training-set construction: hard positives and perturbation negatives.

Positives are shortest topic→answer paths kept when their query similarity
reaches the per-topic candidate mean. Negatives perturb one hop of a
positive: the most query-confusable alternative relations at that hop
(hard) plus uniformly sampled relations from the whole graph (normal),
truncated at the perturbed hop. By default every stored path — positive
and negative — ends with the end-of-path marker, the same textual form
beam search scores at inference.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Iterable, Sequence

import numpy as np

from .graph import (
    KnowledgeGraph,
    Path,
    parse_serialized_path,
    relations_of,
    serialize_path,
    shortest_paths,
)
from .seeding import rng_for
from .similarity import SimilarityModel, sim, top_k_similar

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QueryRecord:
    """One QA example: question text plus resolved topic and answer entities."""

    qid: str
    question: str
    topic_entities: tuple[str, ...]
    answers: tuple[str, ...]
    split: str = "train"

    def __post_init__(self) -> None:
        if not self.topic_entities:
            raise ValueError(f"{self.qid}: topic entity set is empty")
        if not self.answers:
            raise ValueError(f"{self.qid}: answer set is empty")


def load_queries(source: str | IO[str]) -> list[QueryRecord]:
    """Read line-delimited QA records (qid, question, topics, answers, split)."""
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as fh:
            return load_queries(fh)
    records = []
    seen: set[str] = set()
    for line_no, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            record = QueryRecord(
                qid=str(obj["qid"]),
                question=str(obj["question"]),
                topic_entities=tuple(obj["topics"]),
                answers=tuple(obj["answers"]),
                split=str(obj.get("split", "train")),
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ValueError(f"QA line {line_no}: {exc}") from exc
        if record.qid in seen:
            raise ValueError(f"QA line {line_no}: duplicate qid {record.qid!r}")
        seen.add(record.qid)
        records.append(record)
    return records


@dataclass(frozen=True)
class TrainingInstance:
    """One contrastive unit: a positive path and its same-prefix negatives.

    Negatives agree with the positive up to ``hop_index - 1`` and replace
    the relation at ``hop_index`` (1-based); they carry no tail entity
    beyond the perturbed relation.
    """

    qid: str
    question: str
    positive: Path
    hard_negatives: tuple[Path, ...]
    normal_negatives: tuple[Path, ...]
    hop_index: int


def curate_hard_positives(
    query: QueryRecord,
    graph: KnowledgeGraph,
    model: SimilarityModel,
    max_hop: int,
) -> list[Path]:
    """Shortest answer-reaching paths whose similarity meets the topic mean.

    For each topic entity, every shortest path to an answer within
    ``max_hop`` is a candidate; candidates scoring at least the mean
    similarity of that topic's candidate set survive (so a lone candidate
    always survives). Results are deduplicated by (topic, relation
    signature).
    """
    labels = graph.labels
    kept: list[Path] = []
    seen: set[tuple[str, tuple[str, ...]]] = set()
    found_any = False
    for topic in sorted(set(query.topic_entities)):
        candidates = shortest_paths(graph, topic, query.answers, max_hop)
        if not candidates:
            continue
        found_any = True
        sims = [sim(model, query.question, serialize_path(p, labels)) for p in candidates]
        # Exact mean: float averaging can land one ulp above a set of equal
        # similarities, which would wrongly drop every candidate under the
        # >= rule.
        mean = sum(Fraction(value) for value in sims) / len(sims)
        for path, value in zip(candidates, sims):
            if Fraction(value) >= mean:
                key = (path.topic, path.relation_signature)
                if key not in seen:
                    seen.add(key)
                    kept.append(path)
    if not found_any:
        log.info(
            "query %s skipped: no path within %d hops from any topic", query.qid, max_hop
        )
    return kept


def _grounded_entity(path: Path, n_hops: int) -> str:
    entity = path.topic
    for relation, tail in path.hops[:n_hops]:
        if tail is None:
            raise ValueError("positive path has an ungrounded hop")
        entity = tail
    return entity


def curate_hard_negatives(
    query: QueryRecord,
    positives: Sequence[Path],
    graph: KnowledgeGraph,
    model: SimilarityModel,
    k: int,
    rng: np.random.Generator,
    terminated: bool = True,
    include_eop_negative: bool = True,
) -> list[TrainingInstance]:
    """Per-hop relation perturbations for each positive path.

    At hop i of a positive, hard negatives take the k alternative relations
    available at that hop most similar to the replaced relation; normal
    negatives take k uniform draws from the global relation set (without
    replacement while the pool allows). Hops offering neither kind yield no
    instance.

    ``terminated`` stores every path — the positive and all negatives — with
    the end-of-path marker appended, matching the form beam search scores at
    inference; ``include_eop_negative`` adds a premature-stop negative (the
    shared prefix ended immediately) so a marker in the wrong position is
    trained against.
    """
    if k < 1:
        raise ValueError("k must be >= 1")

    def stored(path: Path) -> Path:
        return path.with_eop() if terminated else path

    instances: list[TrainingInstance] = []
    all_relations = sorted(graph.relations)
    for positive in positives:
        stored_positive = stored(positive)
        for hop_index in range(1, positive.hop_count + 1):
            relation = positive.hops[hop_index - 1][0]
            source = _grounded_entity(positive, hop_index - 1)
            prefix = positive.prefix(hop_index - 1)

            alternatives = sorted(relations_of(graph, source) - {relation})
            hard_rels = top_k_similar(model, relation, alternatives, k) if alternatives else []
            hard = [stored(prefix.with_hop(r, None)) for r in hard_rels]
            if include_eop_negative:
                hard.append(prefix.with_eop())

            pool = [r for r in all_relations if r != relation]
            if pool:
                if len(pool) >= k:
                    drawn = rng.choice(len(pool), size=k, replace=False)
                else:
                    drawn = rng.choice(len(pool), size=k, replace=True)
                normal_rels = sorted({pool[int(i)] for i in drawn})
            else:
                normal_rels = []
            normal = [stored(prefix.with_hop(r, None)) for r in normal_rels]

            if not hard and not normal:
                continue
            instances.append(
                TrainingInstance(
                    qid=query.qid,
                    question=query.question,
                    positive=stored_positive,
                    hard_negatives=tuple(hard),
                    normal_negatives=tuple(normal),
                    hop_index=hop_index,
                )
            )
    return instances


@dataclass(frozen=True)
class CorpusInstance:
    """A persisted training instance, paths kept in serialized form."""

    qid: str
    question: str
    positive: str
    hard_negatives: tuple[str, ...]
    normal_negatives: tuple[str, ...]
    hop_index: int

    @property
    def negatives(self) -> tuple[str, ...]:
        return self.hard_negatives + self.normal_negatives

    @property
    def positive_signature(self) -> tuple[str, ...]:
        return parse_serialized_path(self.positive).relation_signature


def _to_corpus_instance(
    instance: TrainingInstance, labels: dict[str, str]
) -> CorpusInstance:
    return CorpusInstance(
        qid=instance.qid,
        question=instance.question,
        positive=serialize_path(instance.positive, labels),
        hard_negatives=tuple(
            serialize_path(p, labels) for p in instance.hard_negatives
        ),
        normal_negatives=tuple(
            serialize_path(p, labels) for p in instance.normal_negatives
        ),
        hop_index=instance.hop_index,
    )


def build_training_set(
    queries: Iterable[QueryRecord],
    graph: KnowledgeGraph,
    model: SimilarityModel,
    max_hop: int,
    k: int,
    corpus_path: str,
    manifest_path: str,
    seed: int,
    terminated: bool = True,
    include_eop_negative: bool = True,
) -> dict:
    """Mine all queries and persist the instance corpus plus its manifest.

    Each query draws its normal-negative randomness from a stream keyed by
    (seed, qid), so the corpus is identical whether queries are processed
    serially or in parallel. Returns the manifest.
    """
    labels = graph.labels
    n_pos = 0
    n_neg = 0
    n_skipped = 0
    n_queries = 0
    with open(corpus_path, "w", encoding="utf-8") as out:
        for query in queries:
            n_queries += 1
            positives = curate_hard_positives(query, graph, model, max_hop)
            if not positives:
                n_skipped += 1
                continue
            rng = rng_for(seed, "mining", query.qid)
            instances = curate_hard_negatives(
                query,
                positives,
                graph,
                model,
                k,
                rng,
                terminated=terminated,
                include_eop_negative=include_eop_negative,
            )
            for instance in instances:
                record = _to_corpus_instance(instance, labels)
                n_pos += 1
                n_neg += len(record.negatives)
                out.write(
                    json.dumps(
                        {
                            "qid": record.qid,
                            "question": record.question,
                            "positive": record.positive,
                            "hard_negatives": list(record.hard_negatives),
                            "normal_negatives": list(record.normal_negatives),
                            "hop_index": record.hop_index,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
    manifest = {
        "seed": seed,
        "k": k,
        "max_hop": max_hop,
        "n_pos": n_pos,
        "n_neg": n_neg,
        "n_queries": n_queries,
        "n_skipped": n_skipped,
        "terminated": terminated,
        "include_eop_negative": include_eop_negative,
        "similarity": model.manifest_info(),
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_training_corpus(source: str | IO[str]) -> list[CorpusInstance]:
    """Read an instance corpus written by :func:`build_training_set`."""
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as fh:
            return load_training_corpus(fh)
    instances = []
    for line_no, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            instances.append(
                CorpusInstance(
                    qid=str(obj["qid"]),
                    question=str(obj["question"]),
                    positive=str(obj["positive"]),
                    hard_negatives=tuple(obj["hard_negatives"]),
                    normal_negatives=tuple(obj["normal_negatives"]),
                    hop_index=int(obj["hop_index"]),
                )
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ValueError(f"corpus line {line_no}: {exc}") from exc
    return instances
