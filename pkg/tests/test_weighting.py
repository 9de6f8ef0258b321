"""Frequency-weight tests: exact fixture values, bounds, and monotonicity.

The fixture values are derived independently: with counts {1, 2, 4, 8}
the raw weights are 15/n, the affine map onto [0.5, 3.0] sends the raw
range [15/8, 15] linearly, giving exactly {3, 11/7, 6/7, 1/2}.
"""

from __future__ import annotations

from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgpath.graph import parse_serialized_path
from kgpath.mining import CorpusInstance
from kgpath.weighting import (
    ClassCounts,
    compute_weights,
    count_occurrences,
    weight_table,
)


def make_instance(qid, positive, negatives):
    return CorpusInstance(
        qid=qid,
        question=f"question for {qid}",
        positive=positive,
        hard_negatives=tuple(negatives),
        normal_negatives=(),
        hop_index=1,
    )


# ---------------------------------------------------------------------------
# Counting
# ---------------------------------------------------------------------------


def test_count_occurrences_matches_independent_recount():
    corpus = [
        make_instance("q1", "t [SEP] a [SEP] b", ["t [SEP] a [SEP] c", "t [SEP] d"]),
        make_instance("q2", "t [SEP] a [SEP] b", ["t [SEP] d"]),
        make_instance("q3", "u [SEP] e", ["u [SEP] a [SEP] c", "u [SEP] e [SEP] [EOP]"]),
    ]
    counts = count_occurrences(corpus)

    expected_pos, expected_neg = Counter(), Counter()
    for instance in corpus:
        expected_pos[parse_serialized_path(instance.positive).relation_signature] += 1
        for negative in instance.negatives:
            expected_neg[parse_serialized_path(negative).relation_signature] += 1
    assert counts.positive == dict(expected_pos)
    assert counts.negative == dict(expected_neg)
    assert counts.n_pos == 3
    assert counts.n_neg == 5


def test_counting_keys_on_signature_without_terminal_marker():
    # A terminated path and its bare form share one weight class.
    corpus = [
        make_instance("q1", "t [SEP] a [SEP] [EOP]", ["t [SEP] b [SEP] [EOP]"]),
        make_instance("q2", "t [SEP] a", ["t [SEP] b"]),
    ]
    counts = count_occurrences(corpus)
    assert counts.positive == {("a",): 2}
    assert counts.negative == {("b",): 2}


def test_paths_reused_across_instances_count_each_time():
    corpus = [
        make_instance("q1", "t [SEP] a", ["t [SEP] b"]),
        make_instance("q1", "t [SEP] a", ["t [SEP] b"]),
    ]
    counts = count_occurrences(corpus)
    assert counts.positive == {("a",): 2}
    assert counts.negative == {("b",): 2}


# ---------------------------------------------------------------------------
# Weight computation
# ---------------------------------------------------------------------------


def fixture_counts():
    return ClassCounts(
        positive={("a",): 1, ("b",): 2, ("c",): 4, ("d",): 8},
        negative={("w",): 1, ("x",): 2, ("y",): 4, ("z",): 8},
    )


def test_fixture_counts_map_to_exact_fraction_weights():
    # Independent derivation with exact rational arithmetic.
    counts = {1: None, 2: None, 4: None, 8: None}
    total = Fraction(15)
    raw = {n: total / n for n in counts}
    lo, hi = min(raw.values()), max(raw.values())
    scale = (Fraction(3) - Fraction(1, 2)) / (hi - lo)
    expected = {n: Fraction(1, 2) + (raw[n] - lo) * scale for n in raw}
    assert expected == {
        1: Fraction(3),
        2: Fraction(11, 7),
        4: Fraction(6, 7),
        8: Fraction(1, 2),
    }

    pos, neg = compute_weights(fixture_counts(), w_minus=0.5, w_plus=3.0)
    assert pos[("a",)] == pytest.approx(3.0, abs=1e-12)
    assert pos[("b",)] == pytest.approx(float(Fraction(11, 7)), abs=1e-12)
    assert pos[("c",)] == pytest.approx(float(Fraction(6, 7)), abs=1e-12)
    assert pos[("d",)] == pytest.approx(0.5, abs=1e-12)
    for sig_pos, sig_neg in zip([("a",), ("b",), ("c",), ("d",)], [("w",), ("x",), ("y",), ("z",)]):
        assert neg[sig_neg] == pytest.approx(pos[sig_pos], abs=1e-12)


def test_uniform_counts_collapse_to_neutral_weight():
    counts = ClassCounts(
        positive={("a",): 5, ("b",): 5, ("c",): 5},
        negative={("x",): 7},
    )
    pos, neg = compute_weights(counts)
    assert pos == {("a",): 1.0, ("b",): 1.0, ("c",): 1.0}
    assert neg == {("x",): 1.0}


def test_empty_class_yields_empty_weights():
    counts = ClassCounts(positive={}, negative={("x",): 3, ("y",): 1})
    pos, neg = compute_weights(counts)
    assert pos == {}
    assert set(neg) == {("x",), ("y",)}


def test_classes_are_rescaled_independently():
    counts = ClassCounts(
        positive={("a",): 1, ("b",): 100},
        negative={("x",): 50, ("y",): 60},
    )
    pos, neg = compute_weights(counts, w_minus=0.5, w_plus=3.0)
    # Each class spans the full band regardless of the other's counts.
    assert pos[("a",)] == pytest.approx(3.0)
    assert pos[("b",)] == pytest.approx(0.5)
    assert neg[("x",)] == pytest.approx(3.0)
    assert neg[("y",)] == pytest.approx(0.5)


def test_invalid_band_raises():
    with pytest.raises(ValueError):
        compute_weights(fixture_counts(), w_minus=2.0, w_plus=1.0)


_count_maps = st.dictionaries(
    keys=st.tuples(st.sampled_from("abcdefgh")),
    values=st.integers(min_value=1, max_value=10_000),
    min_size=1,
    max_size=8,
)


@settings(max_examples=200, deadline=None)
@given(counts=_count_maps)
def test_weights_are_bounded_monotone_and_hit_the_band_edges(counts):
    cc = ClassCounts(positive=dict(counts), negative={})
    pos, _ = compute_weights(cc, w_minus=0.5, w_plus=3.0)
    assert set(pos) == set(counts)
    for weight in pos.values():
        assert 0.5 - 1e-9 <= weight <= 3.0 + 1e-9
    # Rarer signature never gets a smaller weight.
    for sig_a, n_a in counts.items():
        for sig_b, n_b in counts.items():
            if n_a <= n_b:
                assert pos[sig_a] >= pos[sig_b] - 1e-9
    lo, hi = min(counts.values()), max(counts.values())
    if lo == hi:
        assert all(w == 1.0 for w in pos.values())
    else:
        for sig, n in counts.items():
            if n == lo:
                assert pos[sig] == pytest.approx(3.0, abs=1e-9)
            if n == hi:
                assert pos[sig] == pytest.approx(0.5, abs=1e-9)


# ---------------------------------------------------------------------------
# Tabular view
# ---------------------------------------------------------------------------


def test_weight_table_reports_counts_raw_and_final_weights():
    counts = fixture_counts()
    pos, neg = compute_weights(counts)
    rows = weight_table(counts)
    assert len(rows) == 8
    by_key = {(row.class_tag, row.signature): row for row in rows}
    for sig, n in counts.positive.items():
        row = by_key[("positive", sig)]
        assert row.count == n
        assert row.raw_weight == pytest.approx(15 / n)
        assert row.weight == pytest.approx(pos[sig])
    for sig, n in counts.negative.items():
        row = by_key[("negative", sig)]
        assert row.weight == pytest.approx(neg[sig])
