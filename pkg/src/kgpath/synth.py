"""Synthetic KGQA corpus with planted retrieval traps.

Every query asks about one person. The graph gives that person one
outgoing edge per verb relation — only the edge matching the question's
verb reaches the answer; the rest lead to decoys — plus one distractor
edge whose relation id is assembled from the question's own words. Two
failure modes are planted by construction:

* a lexical-overlap retriever prefers the distractor edge on essentially
  every query — it shares the question word, the object noun, and "does"
  with the question, while the correct edge shares at most the verb — and
* the frequent templates embed the question's verb inside the relation id
  (a single verb-matching rule covers all of them), but the three rarest
  templates use relation ids whose words never occur in any question:
  those pairings have to be memorised from a handful of examples, which
  is exactly where frequency-aware loss weights should show up.

Query templates (one per verb/relation pair) follow a power-law frequency
profile, so the memorisation-only templates form a genuine long-tail
slice with two to five training queries each.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .graph import KnowledgeGraph, Path, save_graph, serialize_path
from .mining import QueryRecord
from .seeding import rng_for
from .similarity import HashedBagOfWordsSimilarity, sim

#: Question verb per template. Head templates carry the verb inside the
#: relation id, so one verb-matching rule resolves them all; the three
#: tail templates use relation ids whose words never appear in questions,
#: so their pairings can only be memorised from examples.
_TEMPLATES_SPEC = (
    ("manage", "guild.manage.steward"),
    ("audit", "guild.audit.warden"),
    ("recruit", "guild.recruit.herald"),
    ("mentor", "guild.mentor.guide"),
    ("approve", "guild.approve.keeper"),
    ("assign", "guild.assign.bearer"),
    ("review", "guild.review.scribe"),
    ("convene", "guild.convene.caller"),
    ("endorse", "guild.endorse.signer"),
    ("oversee", "guild.tower.watcher"),
    ("sponsor", "guild.root.patron"),
    ("curate", "guild.amber.tender"),
)

#: Object nouns; they appear in the question and in the distractor
#: relation id, never on the correct route.
_OBJECTS = ("salary", "office", "schedule")

N_TEMPLATES = len(_TEMPLATES_SPEC)
#: Indices of the rarest templates — the intended long-tail slice (the
#: three smallest counts below, distinct from every other count, so the
#: bottom-20% slice of the twelve training classes is exactly this set).
TAIL_TEMPLATES = (9, 10, 11)

#: Share of queries per template. At 200 queries this yields the counts
#:     55 32 24 18 15 12 10 9 8 7 6 4
#: (ratio 13.75 head to tail).
_PROPORTIONS = (
    0.275, 0.160, 0.120, 0.090, 0.075, 0.060,
    0.050, 0.045, 0.040, 0.035, 0.030, 0.020,
)

_FIRST_NAMES = (
    "alder", "briar", "corvus", "delta", "ember", "fenrir", "garnet", "hollis",
    "ivory", "juniper", "kelda", "lumen", "marlow", "nimbus", "onyx", "pavo",
    "quill", "rowan", "sable", "tamsin",
)
_LAST_NAMES = (
    "atlas", "basil", "cedar", "dune", "elm", "flint", "gorse", "heath",
    "iris", "jasper", "kelp", "larch", "moss", "nettle", "oak", "pine",
    "quartz", "reed", "sorrel", "thorn",
)


def gold_relation(template: int) -> str:
    return _TEMPLATES_SPEC[template][1]


def template_verb(template: int) -> str:
    return _TEMPLATES_SPEC[template][0]


def distractor_relation(obj: str) -> str:
    """Shortcut relation: built from question words, so it out-scores the
    gold route under any lexical-overlap similarity."""
    return f"which.does.{obj}"


@dataclass(frozen=True)
class SynthConfig:
    n_queries: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_queries < N_TEMPLATES * 5:
            raise ValueError(f"n_queries must be at least {N_TEMPLATES * 5}")


def template_counts(n_queries: int) -> list[int]:
    """Per-template query counts following the skewed profile, summing exactly.

    Tail templates keep at least four queries (two train, two test);
    everything else keeps at least three.
    """
    minima = [4 if i in TAIL_TEMPLATES else 3 for i in range(N_TEMPLATES)]
    counts = [
        max(m, round(p * n_queries)) for m, p in zip(minima, _PROPORTIONS)
    ]
    while sum(counts) > n_queries:
        candidates = [i for i in range(N_TEMPLATES) if counts[i] > minima[i]]
        largest = max(candidates, key=lambda i: (counts[i], -i))
        counts[largest] -= 1
    while sum(counts) < n_queries:
        counts[0] += 1
    return counts


def test_counts(counts: list[int]) -> list[int]:
    """How many queries of each template are held out for evaluation.

    Tail templates hold out two queries each so the evaluation split
    carries real tail material; every template keeps at least one test
    query and at least one training query.
    """
    held = []
    for i, c in enumerate(counts):
        if i in TAIL_TEMPLATES:
            t = min(2, max(1, c - 2))
        else:
            t = max(1, round(0.2 * c))
        held.append(min(t, c - 1))
    return held


@dataclass(frozen=True)
class GoldRecord:
    """Oracle data for one synthetic query."""

    qid: str
    split: str
    template: int
    tail_template: bool
    gold_path: str
    gold_signature: tuple[str, ...]
    distractor_path: str
    distractor_target: str
    shortcut_planted: bool = True


@dataclass
class SynthCorpus:
    graph: KnowledgeGraph
    queries: list[QueryRecord]
    gold: list[GoldRecord]
    manifest: dict


def generate_corpus(cfg: SynthConfig) -> SynthCorpus:
    """Build the full synthetic corpus for a seed; pure and deterministic."""
    rng = rng_for(cfg.seed, "synth")
    counts = template_counts(cfg.n_queries)
    held = test_counts(counts)

    graph = KnowledgeGraph()
    entity_n = 0

    def pick_name() -> str:
        first = _FIRST_NAMES[int(rng.integers(len(_FIRST_NAMES)))]
        last = _LAST_NAMES[int(rng.integers(len(_LAST_NAMES)))]
        return f"{first} {last}"

    def new_entity(qid: str, suffix: str, label: str) -> str:
        entity_id = f"{qid}.{suffix}"
        graph.add_entity(entity_id)
        graph.set_label(entity_id, label)
        return entity_id

    queries: list[QueryRecord] = []
    gold: list[GoldRecord] = []
    qidx = 0
    for template in range(N_TEMPLATES):
        verb, relation = _TEMPLATES_SPEC[template]
        total, n_test = counts[template], held[template]
        for j in range(total):
            qid = f"sq{qidx:04d}"
            qidx += 1
            split = "test" if j >= total - n_test else "train"
            obj = _OBJECTS[int(rng.integers(len(_OBJECTS)))]

            # The topic label is the only entity text the scorer ever sees,
            # so it stays free of synthetic id noise; the rest carry a
            # counter for readability in prompts and reports.
            topic = new_entity(qid, "t", pick_name())
            entity_n += 1
            answer = new_entity(qid, "a", f"{pick_name()} {entity_n}")
            entity_n += 1
            wrong = new_entity(qid, "w", f"{pick_name()} {entity_n}")

            question = f"which {obj} does {graph.entities[topic].label} {verb}"
            distractor_rel = distractor_relation(obj)

            graph.add_triple(topic, relation, answer)
            graph.add_triple(topic, distractor_rel, wrong)
            # Decoy edges: every other verb relation leaves this topic too,
            # so answering requires picking the verb-matched one, not just
            # any relation of the verb family.
            for other in range(N_TEMPLATES):
                if other == template:
                    continue
                entity_n += 1
                decoy = new_entity(
                    qid, f"x{other}", f"{pick_name()} {entity_n}"
                )
                graph.add_triple(topic, gold_relation(other), decoy)

            queries.append(
                QueryRecord(
                    qid=qid,
                    question=question,
                    topic_entities=(topic,),
                    answers=(answer,),
                    split=split,
                )
            )
            gold.append(
                GoldRecord(
                    qid=qid,
                    split=split,
                    template=template,
                    tail_template=template in TAIL_TEMPLATES,
                    gold_path=serialize_path(
                        Path(topic, ((relation, answer),)), graph.labels
                    ),
                    gold_signature=(relation,),
                    distractor_path=serialize_path(
                        Path(topic, ((distractor_rel, wrong),)), graph.labels
                    ),
                    distractor_target=graph.entities[wrong].label,
                )
            )

    checker = HashedBagOfWordsSimilarity()
    wins = sum(
        sim(checker, q.question, g.distractor_path)
        > sim(checker, q.question, g.gold_path)
        for q, g in zip(queries, gold)
    )
    manifest = {
        "n_queries": cfg.n_queries,
        "seed": cfg.seed,
        "template_counts": counts,
        "test_counts": held,
        "count_ratio": max(counts) / min(counts),
        "shortcut_win_fraction": wins / len(queries),
        "tail_templates": list(TAIL_TEMPLATES),
        "templates": [
            {"verb": verb, "relation": relation}
            for verb, relation in _TEMPLATES_SPEC
        ],
        "relations": sorted(graph.relations),
        "n_entities": len(graph.entities),
        "n_triples": len(graph.triples),
        "n_relations": len(graph.relations),
    }
    return SynthCorpus(graph, queries, gold, manifest)


def write_corpus(corpus: SynthCorpus, out_dir: str) -> dict:
    """Persist graph, QA records, gold oracle rows, and the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    save_graph(corpus.graph, os.path.join(out_dir, "triples.tsv"))
    with open(os.path.join(out_dir, "qa.jsonl"), "w", encoding="utf-8") as fh:
        for q in corpus.queries:
            fh.write(
                json.dumps(
                    {
                        "qid": q.qid,
                        "question": q.question,
                        "topics": list(q.topic_entities),
                        "answers": list(q.answers),
                        "split": q.split,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    with open(os.path.join(out_dir, "gold.jsonl"), "w", encoding="utf-8") as fh:
        for g in corpus.gold:
            fh.write(
                json.dumps(
                    {
                        "qid": g.qid,
                        "split": g.split,
                        "template": g.template,
                        "tail_template": g.tail_template,
                        "gold_path": g.gold_path,
                        "gold_signature": list(g.gold_signature),
                        "distractor_path": g.distractor_path,
                        "distractor_target": g.distractor_target,
                        "shortcut_planted": g.shortcut_planted,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(corpus.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return corpus.manifest


def load_gold(path: str) -> list[GoldRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            records.append(
                GoldRecord(
                    qid=obj["qid"],
                    split=obj["split"],
                    template=int(obj["template"]),
                    tail_template=bool(obj["tail_template"]),
                    gold_path=obj["gold_path"],
                    gold_signature=tuple(obj["gold_signature"]),
                    distractor_path=obj["distractor_path"],
                    distractor_target=obj["distractor_target"],
                    shortcut_planted=bool(obj["shortcut_planted"]),
                )
            )
    return records
