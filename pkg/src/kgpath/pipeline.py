"""Batch pipeline stages: synth → ingest → mine → train → retrieve → evaluate → diagnose.

Each stage is a pure function of (on-disk inputs, config, seed): it reads
the previous stage's artifacts by path, writes its own outputs plus a
manifest carrying the seed and a config digest, and can be rerun in
isolation. Wall-clock measurements go to separate ``timing.json`` files so
the metric artifacts are byte-stable across reruns.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import time

from .artifacts import (
    file_digest,
    read_jsonl,
    require_artifact,
    value_digest,
    write_json,
    write_jsonl,
)
from .config import RunConfig
from .evaluation import (
    EvalRecord,
    bias_report,
    f1,
    hits_at_1,
    render_report,
    report_records,
    retrieval_time,
    tail_signatures,
    write_eval_records,
)
from .generation import build_generator_client
from .graph import IngestError, load_graph, save_graph
from .inference import SimilarityBeamScorer, retrieve_and_answer
from .mining import build_training_set, load_queries, load_training_corpus
from .scorer import CrossAttentiveScorer, load_checkpoint
from .seeding import derive_seed
from .similarity import build_similarity_model
from .synth import GoldRecord, SynthConfig, generate_corpus, write_corpus
from .training import train
from .weighting import count_occurrences

log = logging.getLogger(__name__)


def _stage_dir(cfg: RunConfig, stage: str) -> str:
    path = os.path.join(cfg.output_dir, stage)
    os.makedirs(path, exist_ok=True)
    return path


def _base_manifest(cfg: RunConfig, stage: str) -> dict:
    return {
        "stage": stage,
        "seed": cfg.seed,
        "config_digest": value_digest(cfg.to_dict()),
    }


def _resolve_inputs(cfg: RunConfig) -> tuple[str, str]:
    graph_file = cfg.graph_file
    qa_file = cfg.qa_file
    if cfg.synth is not None:
        synth_dir = os.path.join(cfg.output_dir, "synth")
        graph_file = graph_file or os.path.join(synth_dir, "triples.tsv")
        qa_file = qa_file or os.path.join(synth_dir, "qa.jsonl")
    if not graph_file or not qa_file:
        raise ValueError("graph_file and qa_file must be set (or a synth section given)")
    return graph_file, qa_file


def stage_synth(cfg: RunConfig) -> dict:
    """Generate the synthetic corpus under <output_dir>/synth."""
    if cfg.synth is None:
        raise ValueError("config has no synth section")
    synth_cfg = SynthConfig(n_queries=cfg.synth.n_queries, seed=cfg.seed)
    corpus = generate_corpus(synth_cfg)
    out = _stage_dir(cfg, "synth")
    corpus.manifest.update(_base_manifest(cfg, "synth"))
    manifest = dict(corpus.manifest)
    write_corpus(corpus, out)
    log.info(
        "synth: %d queries, %d entities, shortcut win fraction %.3f",
        len(corpus.queries),
        len(corpus.graph.entities),
        manifest["shortcut_win_fraction"],
    )
    return manifest


def stage_ingest(cfg: RunConfig) -> dict:
    """Validate and normalize the graph and QA inputs."""
    graph_file, qa_file = _resolve_inputs(cfg)
    require_artifact(graph_file, "`kgpath synth` or provide graph_file")
    require_artifact(qa_file, "`kgpath synth` or provide qa_file")
    graph = load_graph(graph_file)
    queries = load_queries(qa_file)

    unresolved = []
    for record in queries:
        for entity in list(record.topic_entities) + list(record.answers):
            if entity not in graph.entities:
                unresolved.append((record.qid, entity))
    if unresolved:
        listing = ", ".join(f"{qid}:{ent}" for qid, ent in unresolved[:10])
        raise IngestError(
            f"{len(unresolved)} unresolved entities (first shown): {listing}"
        )

    out = _stage_dir(cfg, "ingest")
    save_graph(graph, os.path.join(out, "graph.tsv"))
    write_jsonl(
        os.path.join(out, "qa.jsonl"),
        [
            {
                "qid": q.qid,
                "question": q.question,
                "topics": list(q.topic_entities),
                "answers": list(q.answers),
                "split": q.split,
            }
            for q in queries
        ],
    )
    splits: dict[str, int] = {}
    for q in queries:
        splits[q.split] = splits.get(q.split, 0) + 1
    manifest = _base_manifest(cfg, "ingest")
    manifest.update(
        {
            "graph_source": graph_file,
            "qa_source": qa_file,
            "n_entities": len(graph.entities),
            "n_triples": len(graph.triples),
            "n_relations": len(graph.relations),
            "n_queries": len(queries),
            "splits": splits,
            "max_hop": cfg.mining.max_hop,
        }
    )
    write_json(os.path.join(out, "manifest.json"), manifest)
    return manifest


def stage_mine(cfg: RunConfig) -> dict:
    """Mine the training corpus from the train-split queries."""
    ingest = _stage_dir(cfg, "ingest")
    graph = load_graph(require_artifact(os.path.join(ingest, "graph.tsv"), "`kgpath ingest`"))
    queries = load_queries(require_artifact(os.path.join(ingest, "qa.jsonl"), "`kgpath ingest`"))
    train_queries = [q for q in queries if q.split == "train"]
    model = build_similarity_model(cfg.similarity_backend)
    out = _stage_dir(cfg, "mine")
    corpus_path = os.path.join(out, "corpus.jsonl")
    mined = build_training_set(
        train_queries,
        graph,
        model,
        max_hop=cfg.mining.max_hop,
        k=cfg.mining.k,
        corpus_path=corpus_path,
        manifest_path=os.path.join(out, "mining.json"),
        seed=cfg.seed,
        terminated=cfg.mining.terminated,
        include_eop_negative=cfg.mining.include_eop_negative,
    )
    manifest = _base_manifest(cfg, "mine")
    manifest.update(mined)
    manifest["corpus_digest"] = file_digest(corpus_path)
    write_json(os.path.join(out, "manifest.json"), manifest)
    log.info("mine: %d instances (%d skipped queries)", mined["n_pos"], mined["n_skipped"])
    return manifest


def stage_train(cfg: RunConfig) -> dict:
    """Train the scorer on the mined corpus; write checkpoint and log."""
    mine_dir = _stage_dir(cfg, "mine")
    corpus_path = require_artifact(os.path.join(mine_dir, "corpus.jsonl"), "`kgpath mine`")
    corpus = load_training_corpus(corpus_path)
    scorer_cfg = dataclasses.replace(cfg.scorer, seed=derive_seed(cfg.seed, "scorer-init"))
    scorer = CrossAttentiveScorer(scorer_cfg)
    train_cfg = dataclasses.replace(cfg.training, seed=derive_seed(cfg.seed, "training"))
    out = _stage_dir(cfg, "train")
    started = time.perf_counter()
    result = train(
        corpus,
        train_cfg,
        scorer,
        log_path=os.path.join(out, "log.jsonl"),
        checkpoint_path=os.path.join(out, "checkpoint.pt"),
        manifest_extra={"corpus_digest": file_digest(corpus_path), "run_seed": cfg.seed},
    )
    write_json(
        os.path.join(out, "timing.json"),
        {"train_seconds": time.perf_counter() - started},
    )
    manifest = _base_manifest(cfg, "train")
    manifest.update(
        {
            "n_instances": len(corpus),
            "corpus_digest": file_digest(corpus_path),
            "best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss,
            "epochs": train_cfg.epochs,
            "weighted": train_cfg.weighted,
        }
    )
    write_json(os.path.join(out, "manifest.json"), manifest)
    log.info(
        "train: best epoch %d, val loss %.4f", result.best_epoch, result.best_val_loss
    )
    return manifest


def _load_retrieval_scorer(cfg: RunConfig):
    if cfg.retrieval_scorer == "similarity":
        return SimilarityBeamScorer(build_similarity_model(cfg.similarity_backend)), None
    ckpt = require_artifact(
        os.path.join(cfg.output_dir, "train", "checkpoint.pt"), "`kgpath train`"
    )
    scorer, _ = load_checkpoint(ckpt)
    scorer.eval()
    return scorer, file_digest(ckpt)


def stage_retrieve(cfg: RunConfig) -> dict:
    """Run beam search + generation over the test split."""
    ingest = _stage_dir(cfg, "ingest")
    graph = load_graph(require_artifact(os.path.join(ingest, "graph.tsv"), "`kgpath ingest`"))
    queries = load_queries(require_artifact(os.path.join(ingest, "qa.jsonl"), "`kgpath ingest`"))
    test_queries = sorted(
        (q for q in queries if q.split == "test"), key=lambda q: q.qid
    )
    if not test_queries:
        raise ValueError("no test-split queries to retrieve")
    scorer, ckpt_digest = _load_retrieval_scorer(cfg)
    client = build_generator_client(cfg.inference.llm_client)

    rows = []
    total_rt = 0.0
    for record in test_queries:
        result, selected, rt = retrieve_and_answer(
            graph, record, scorer, client, cfg.inference
        )
        total_rt += rt
        rows.append(
            {
                "qid": record.qid,
                "paths": list(result.supporting_paths),
                "scores": [float(s) for _, s in selected],
                "answer": result.answer,
                "rt_seconds": rt,
            }
        )
    out = _stage_dir(cfg, "retrieve")
    write_jsonl(os.path.join(out, "retrieval.jsonl"), rows)
    write_json(
        os.path.join(out, "timing.json"),
        {"mean_rt_seconds": total_rt / len(rows), "total_rt_seconds": total_rt},
    )
    manifest = _base_manifest(cfg, "retrieve")
    manifest.update(
        {
            "n_queries": len(rows),
            "scorer": cfg.retrieval_scorer,
            "checkpoint_digest": ckpt_digest,
            "beam_width": cfg.inference.beam_width,
            "top_k": cfg.inference.top_k,
            "max_hop": cfg.inference.max_hop,
        }
    )
    write_json(os.path.join(out, "manifest.json"), manifest)
    return manifest


def stage_evaluate(cfg: RunConfig) -> dict:
    """Score the retrieval run: Hits@1 and F1 to metrics, RT to timing."""
    ingest = _stage_dir(cfg, "ingest")
    graph = load_graph(require_artifact(os.path.join(ingest, "graph.tsv"), "`kgpath ingest`"))
    queries = {
        q.qid: q
        for q in load_queries(
            require_artifact(os.path.join(ingest, "qa.jsonl"), "`kgpath ingest`")
        )
    }
    retrieval = read_jsonl(
        require_artifact(
            os.path.join(cfg.output_dir, "retrieve", "retrieval.jsonl"),
            "`kgpath retrieve`",
        )
    )
    labels = graph.labels
    records = []
    for row in retrieval:
        query = queries[row["qid"]]
        records.append(
            EvalRecord(
                qid=query.qid,
                question=query.question,
                predicted=(row["answer"],),
                gold=tuple(sorted(labels.get(a, a) for a in query.answers)),
                top1_path=row["paths"][0],
                retrieval_seconds=float(row["rt_seconds"]),
            )
        )
    out = _stage_dir(cfg, "evaluate")
    write_eval_records(records, os.path.join(out, "records.jsonl"))
    metrics = {
        "hits_at_1": hits_at_1(records),
        "f1": f1(records),
        "n_records": len(records),
    }
    write_json(os.path.join(out, "metrics.json"), metrics)
    write_json(os.path.join(out, "timing.json"), {"retrieval_time": retrieval_time(records)})
    manifest = _base_manifest(cfg, "evaluate")
    manifest.update(metrics)
    write_json(os.path.join(out, "manifest.json"), manifest)
    log.info("evaluate: Hits@1 %.2f, F1 %.2f", metrics["hits_at_1"], metrics["f1"])
    return manifest


def stage_diagnose(cfg: RunConfig) -> dict:
    """Produce the bias report from eval records and training counts."""
    from .evaluation import read_eval_records

    records = read_eval_records(
        require_artifact(
            os.path.join(cfg.output_dir, "evaluate", "records.jsonl"),
            "`kgpath evaluate`",
        )
    )
    corpus = load_training_corpus(
        require_artifact(
            os.path.join(cfg.output_dir, "mine", "corpus.jsonl"), "`kgpath mine`"
        )
    )
    counts = count_occurrences(corpus).positive
    model = build_similarity_model(cfg.similarity_backend)
    report = bias_report(
        records,
        model,
        counts,
        shortcut_threshold=cfg.diagnostics.shortcut_threshold,
        tail_fraction=cfg.diagnostics.tail_fraction,
    )
    out = _stage_dir(cfg, "diagnose")
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(render_report(report))
    write_jsonl(os.path.join(out, "report.jsonl"), report_records(report))
    manifest = _base_manifest(cfg, "diagnose")
    manifest.update(
        {
            "hits_at_1": report.hits,
            "error": report.error,
            "shortcut_threshold": report.shortcut_threshold,
            "tail_fraction": report.tail_fraction,
        }
    )
    write_json(os.path.join(out, "manifest.json"), manifest)
    return manifest


def tail_query_ids(
    gold: list[GoldRecord], training_counts: dict, tail_fraction: float
) -> set[str]:
    """Query ids whose gold signature falls in the training tail slice."""
    tail = tail_signatures(training_counts, tail_fraction)
    return {
        g.qid
        for g in gold
        if g.gold_signature in tail or g.gold_signature not in training_counts
    }


def run_pipeline(cfg: RunConfig) -> dict[str, dict]:
    """Run every stage in order; skips training for the similarity baseline."""
    manifests: dict[str, dict] = {}
    if cfg.synth is not None:
        manifests["synth"] = stage_synth(cfg)
    manifests["ingest"] = stage_ingest(cfg)
    manifests["mine"] = stage_mine(cfg)
    if cfg.retrieval_scorer != "similarity":
        manifests["train"] = stage_train(cfg)
    manifests["retrieve"] = stage_retrieve(cfg)
    manifests["evaluate"] = stage_evaluate(cfg)
    manifests["diagnose"] = stage_diagnose(cfg)
    return manifests
