"""Retrieval metrics and bias diagnostics.

Alongside Hits@1 / F1 / mean retrieval time, this module quantifies two
failure modes of a retrieval run: answers backed by paths that merely look
like the query (shortcut), and answers backed by relation paths rare in
the training corpus (long tail).
"""

from __future__ import annotations

import json
import math
import re
import string
from dataclasses import dataclass
from typing import IO, Mapping, Sequence

from .graph import parse_serialized_path
from .similarity import SimilarityModel, sim

Signature = tuple[str, ...]

_STRIP_CHARS = string.punctuation + string.whitespace


def normalize_answer(text: str) -> str:
    """Lowercase and strip outer whitespace/punctuation for matching."""
    return text.lower().strip(_STRIP_CHARS)


@dataclass(frozen=True)
class EvalRecord:
    """One evaluated query: predictions, gold answers, and the top path."""

    qid: str
    question: str
    predicted: tuple[str, ...]
    gold: tuple[str, ...]
    top1_path: str
    retrieval_seconds: float

    @property
    def correct(self) -> bool:
        """Whether the top-ranked prediction matches any gold answer."""
        if not self.predicted:
            return False
        return normalize_answer(self.predicted[0]) in {
            normalize_answer(g) for g in self.gold
        }


def write_eval_records(records: Sequence[EvalRecord], sink: str | IO[str]) -> None:
    if isinstance(sink, str):
        with open(sink, "w", encoding="utf-8") as fh:
            write_eval_records(records, fh)
        return
    for r in records:
        sink.write(
            json.dumps(
                {
                    "qid": r.qid,
                    "question": r.question,
                    "predicted": list(r.predicted),
                    "gold": list(r.gold),
                    "top1_path": r.top1_path,
                    "retrieval_seconds": r.retrieval_seconds,
                    "correct": r.correct,
                },
                sort_keys=True,
            )
            + "\n"
        )


def read_eval_records(source: str | IO[str]) -> list[EvalRecord]:
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as fh:
            return read_eval_records(fh)
    records = []
    for line in source:
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        records.append(
            EvalRecord(
                qid=str(obj["qid"]),
                question=str(obj["question"]),
                predicted=tuple(obj["predicted"]),
                gold=tuple(obj["gold"]),
                top1_path=str(obj["top1_path"]),
                retrieval_seconds=float(obj["retrieval_seconds"]),
            )
        )
    return records


def hits_at_1(records: Sequence[EvalRecord]) -> float:
    """Percentage of queries whose top prediction matches a gold answer."""
    if not records:
        raise ValueError("no records to evaluate")
    return 100.0 * sum(r.correct for r in records) / len(records)


def f1(records: Sequence[EvalRecord]) -> float:
    """Macro-averaged F1 between normalized predicted and gold answer sets."""
    if not records:
        raise ValueError("no records to evaluate")
    total = 0.0
    for r in records:
        pred = {normalize_answer(p) for p in r.predicted}
        gold = {normalize_answer(g) for g in r.gold}
        if not pred and not gold:
            total += 1.0
            continue
        if not pred or not gold:
            continue
        overlap = len(pred & gold)
        if overlap == 0:
            continue
        precision = overlap / len(pred)
        recall = overlap / len(gold)
        total += 2 * precision * recall / (precision + recall)
    return 100.0 * total / len(records)


def retrieval_time(records: Sequence[EvalRecord]) -> float:
    """Mean retrieval seconds per query."""
    if not records:
        raise ValueError("no records to evaluate")
    for r in records:
        if r.retrieval_seconds < 0:
            raise ValueError(f"{r.qid}: negative retrieval time")
    return sum(r.retrieval_seconds for r in records) / len(records)


def _subsets(records: Sequence[EvalRecord]) -> dict[str, list[EvalRecord]]:
    out: dict[str, list[EvalRecord]] = {"correct": [], "incorrect": []}
    for r in records:
        out["correct" if r.correct else "incorrect"].append(r)
    return out


def is_shortcut(record: EvalRecord, model: SimilarityModel, threshold: float) -> bool:
    return sim(model, record.question, record.top1_path) > threshold


def shortcut_ratio(
    records: Sequence[EvalRecord], model: SimilarityModel, threshold: float = 0.95
) -> dict[str, float]:
    """Per-subset share of top paths nearly indistinguishable from the query.

    Subsets with no members are omitted from the result rather than
    reported as zero.
    """
    out = {}
    for name, members in _subsets(records).items():
        if not members:
            continue
        hits = sum(is_shortcut(r, model, threshold) for r in members)
        out[name] = 100.0 * hits / len(members)
    return out


def tail_signatures(
    training_counts: Mapping[Signature, int], tail_fraction: float = 0.2
) -> set[Signature]:
    """The least-frequent slice of training signatures (count, then name)."""
    if not training_counts:
        raise ValueError("training counts are empty")
    n_tail = math.ceil(tail_fraction * len(training_counts))
    ranked = sorted(training_counts.items(), key=lambda cs: (cs[1], cs[0]))
    return {sig for sig, _ in ranked[:n_tail]}


def is_tail(
    record: EvalRecord, training_counts: Mapping[Signature, int], tail: set[Signature]
) -> bool:
    signature = parse_serialized_path(record.top1_path).relation_signature
    if signature not in training_counts:
        return True
    return signature in tail


def long_tail_ratio(
    records: Sequence[EvalRecord],
    training_counts: Mapping[Signature, int],
    tail_fraction: float = 0.2,
) -> dict[str, float]:
    """Per-subset share of top paths whose signature is rare in training.

    Signatures never seen in training count as tail.
    """
    tail = tail_signatures(training_counts, tail_fraction)
    out = {}
    for name, members in _subsets(records).items():
        if not members:
            continue
        hits = sum(is_tail(r, training_counts, tail) for r in members)
        out[name] = 100.0 * hits / len(members)
    return out


@dataclass(frozen=True)
class SubsetDiagnostics:
    size: int
    shortcut_pct: float | None
    long_tail_pct: float | None


@dataclass(frozen=True)
class AttributionEntry:
    """An error source as a share of all records and of errors alone."""

    pct_of_all: float
    pct_of_errors: float


@dataclass(frozen=True)
class BiasReport:
    """Bias diagnostics for one retrieval run."""

    n_records: int
    hits: float
    error: float
    subsets: dict[str, SubsetDiagnostics]
    attribution: dict[str, AttributionEntry]
    shortcut_threshold: float
    tail_fraction: float


def bias_report(
    records: Sequence[EvalRecord],
    model: SimilarityModel,
    training_counts: Mapping[Signature, int],
    shortcut_threshold: float = 0.95,
    tail_fraction: float = 0.2,
) -> BiasReport:
    """Full diagnostic: per-subset ratios plus error attribution.

    Attribution looks only at incorrect records and reports, for each bias
    (and their union), the percentage of all records affected, with the
    share of errors alongside.
    """
    hits = hits_at_1(records)
    tail = tail_signatures(training_counts, tail_fraction)
    subsets = {}
    for name, members in _subsets(records).items():
        if not members:
            continue
        subsets[name] = SubsetDiagnostics(
            size=len(members),
            shortcut_pct=100.0
            * sum(is_shortcut(r, model, shortcut_threshold) for r in members)
            / len(members),
            long_tail_pct=100.0
            * sum(is_tail(r, training_counts, tail) for r in members)
            / len(members),
        )
    incorrect = [r for r in records if not r.correct]
    attribution: dict[str, AttributionEntry] = {}
    if incorrect:
        n_all = len(records)
        n_err = len(incorrect)
        flags = [
            (
                is_shortcut(r, model, shortcut_threshold),
                is_tail(r, training_counts, tail),
            )
            for r in incorrect
        ]
        counts = {
            "shortcut": sum(s for s, _ in flags),
            "long_tail": sum(t for _, t in flags),
            "union": sum(s or t for s, t in flags),
        }
        attribution = {
            name: AttributionEntry(100.0 * c / n_all, 100.0 * c / n_err)
            for name, c in counts.items()
        }
    return BiasReport(
        n_records=len(records),
        hits=hits,
        error=100.0 - hits,
        subsets=subsets,
        attribution=attribution,
        shortcut_threshold=shortcut_threshold,
        tail_fraction=tail_fraction,
    )


def render_report(report: BiasReport) -> str:
    """Structured text rendering; :func:`parse_report` inverts it exactly."""
    lines = [
        "retrieval bias report",
        "=====================",
        f"records: {report.n_records}",
        f"hits@1: {report.hits!r}",
        f"error: {report.error!r}",
        f"config: shortcut_threshold={report.shortcut_threshold!r} "
        f"tail_fraction={report.tail_fraction!r}",
    ]
    for name in ("correct", "incorrect"):
        if name not in report.subsets:
            lines.append("")
            lines.append(f"subset {name}: absent")
            continue
        sub = report.subsets[name]
        lines.append("")
        lines.append(f"subset {name} (n={sub.size})")
        lines.append(f"  shortcut_ratio: {sub.shortcut_pct!r}")
        lines.append(f"  long_tail_ratio: {sub.long_tail_pct!r}")
    lines.append("")
    lines.append("error attribution (% of all records, % of errors in parentheses)")
    if not report.attribution:
        lines.append("  absent")
    else:
        for name in ("shortcut", "long_tail", "union"):
            entry = report.attribution[name]
            lines.append(f"  {name}: {entry.pct_of_all!r} ({entry.pct_of_errors!r})")
    return "\n".join(lines) + "\n"


_SUBSET_RE = re.compile(r"^subset (\w+) \(n=(\d+)\)$")
_RATIO_RE = re.compile(r"^  (\w+)_ratio: (.+)$")
_ATTR_RE = re.compile(r"^  (\w+): (.+) \((.+)\)$")


def parse_report(text: str) -> BiasReport:
    """Read a rendered report back into its structured form."""
    lines = text.splitlines()
    kv = {}
    for line in lines[:6]:
        if ": " in line and not line.startswith("  "):
            key, _, value = line.partition(": ")
            kv[key] = value
    config = dict(
        part.split("=") for part in kv.get("config", "").split() if "=" in part
    )
    subsets: dict[str, SubsetDiagnostics] = {}
    attribution: dict[str, AttributionEntry] = {}
    current: str | None = None
    in_attr = False
    for line in lines:
        m = _SUBSET_RE.match(line)
        if m:
            current = m.group(1)
            subsets[current] = SubsetDiagnostics(int(m.group(2)), None, None)
            in_attr = False
            continue
        if line.startswith("error attribution"):
            in_attr = True
            continue
        m = _RATIO_RE.match(line)
        if m and current is not None and not in_attr:
            sub = subsets[current]
            value = float(m.group(2))
            if m.group(1) == "shortcut":
                subsets[current] = SubsetDiagnostics(sub.size, value, sub.long_tail_pct)
            else:
                subsets[current] = SubsetDiagnostics(sub.size, sub.shortcut_pct, value)
            continue
        m = _ATTR_RE.match(line)
        if m and in_attr:
            attribution[m.group(1)] = AttributionEntry(
                float(m.group(2)), float(m.group(3))
            )
    return BiasReport(
        n_records=int(kv["records"]),
        hits=float(kv["hits@1"]),
        error=float(kv["error"]),
        subsets=subsets,
        attribution=attribution,
        shortcut_threshold=float(config["shortcut_threshold"]),
        tail_fraction=float(config["tail_fraction"]),
    )


def report_records(report: BiasReport) -> list[dict]:
    """Machine-readable companion rows for the line-delimited report file."""
    rows: list[dict] = [
        {
            "kind": "summary",
            "records": report.n_records,
            "hits_at_1": report.hits,
            "error": report.error,
            "shortcut_threshold": report.shortcut_threshold,
            "tail_fraction": report.tail_fraction,
        }
    ]
    for name, sub in sorted(report.subsets.items()):
        rows.append(
            {
                "kind": "subset",
                "subset": name,
                "size": sub.size,
                "shortcut_ratio": sub.shortcut_pct,
                "long_tail_ratio": sub.long_tail_pct,
            }
        )
    for name, entry in sorted(report.attribution.items()):
        rows.append(
            {
                "kind": "attribution",
                "bias": name,
                "pct_of_all": entry.pct_of_all,
                "pct_of_errors": entry.pct_of_errors,
            }
        )
    return rows
