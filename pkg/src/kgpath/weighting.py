"""Graph-contextual path weights from relation-signature frequencies.

Rare relation signatures get loss weights up to ``w_plus``; common ones
drop toward ``w_minus``. Weights are computed once from the mined corpus,
before training, separately for the positive and negative classes.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

from .graph import parse_serialized_path
from .mining import CorpusInstance

Signature = tuple[str, ...]


@dataclass(frozen=True)
class ClassCounts:
    """Occurrence counts per relation signature, split by sample class."""

    positive: dict[Signature, int]
    negative: dict[Signature, int]

    @property
    def n_pos(self) -> int:
        return sum(self.positive.values())

    @property
    def n_neg(self) -> int:
        return sum(self.negative.values())


@dataclass(frozen=True)
class WeightedSample:
    """One signature's bookkeeping: count, raw weight, rescaled weight."""

    signature: Signature
    count: int
    class_tag: str
    raw_weight: float
    weight: float


def count_occurrences(corpus: Iterable[CorpusInstance]) -> ClassCounts:
    """Tally positive and negative signature occurrences over a corpus.

    Every instance contributes one occurrence of its positive's signature
    and one per negative; a path reused across instances counts each time.
    """
    positive: Counter[Signature] = Counter()
    negative: Counter[Signature] = Counter()
    for instance in corpus:
        positive[parse_serialized_path(instance.positive).relation_signature] += 1
        for neg in instance.negatives:
            negative[parse_serialized_path(neg).relation_signature] += 1
    return ClassCounts(dict(positive), dict(negative))


def _rescale(
    counts: Mapping[Signature, int], w_minus: float, w_plus: float
) -> dict[Signature, float]:
    if not counts:
        return {}
    total = sum(counts.values())
    raw = {sig: total / n for sig, n in counts.items()}
    lo, hi = min(raw.values()), max(raw.values())
    if hi == lo:
        # No rarity signal in this class: weight everything neutrally.
        return {sig: 1.0 for sig in raw}
    scale = (w_plus - w_minus) / (hi - lo)
    return {sig: w_minus + (value - lo) * scale for sig, value in raw.items()}


def compute_weights(
    counts: ClassCounts, w_minus: float = 0.5, w_plus: float = 3.0
) -> tuple[dict[Signature, float], dict[Signature, float]]:
    """Rescaled per-signature weights for the positive and negative classes.

    Within a class, the raw weight is the class total divided by the
    signature count; raw weights are mapped affinely onto
    ``[w_minus, w_plus]``. A class whose signatures all share one count
    maps to the neutral weight 1.0.
    """
    if w_minus > w_plus:
        raise ValueError("w_minus must not exceed w_plus")
    return (
        _rescale(counts.positive, w_minus, w_plus),
        _rescale(counts.negative, w_minus, w_plus),
    )


def weight_table(counts: ClassCounts, w_minus: float = 0.5, w_plus: float = 3.0) -> list[WeightedSample]:
    """Flat per-signature view of counts and weights, for manifests and reports."""
    pos_w, neg_w = compute_weights(counts, w_minus, w_plus)
    rows = []
    for tag, class_counts, weights in (
        ("positive", counts.positive, pos_w),
        ("negative", counts.negative, neg_w),
    ):
        total = sum(class_counts.values())
        for sig in sorted(class_counts):
            rows.append(
                WeightedSample(
                    signature=sig,
                    count=class_counts[sig],
                    class_tag=tag,
                    raw_weight=total / class_counts[sig],
                    weight=weights[sig],
                )
            )
    return rows
