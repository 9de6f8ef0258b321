"""Scorer: tokenizer, input assembly, transformer forward pass, checkpoints.

The forward pass is checked against an independent NumPy reimplementation
reading the same parameters, so tensor-library bookkeeping (masking, head
splitting, span selection) cannot silently drift from the intended math.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from kgpath.scorer import (
    CLS_ID,
    EOP_ID,
    NUM_SPECIAL_TOKENS,
    PSP_ID,
    QSP_ID,
    SEP_ID,
    CrossAttentionBlock,
    CrossAttentiveScorer,
    HashTokenizer,
    ScorerConfig,
    build_input_sequence,
    cross_attention,
    load_checkpoint,
    save_checkpoint,
)

CFG = ScorerConfig(d=16, d_k=8, n_layers=2, n_heads=2, max_seq_len=32, dtype="float64", seed=3)

PAIRS = [
    ("who does alex stone manage", "alex stone [SEP] guild.ledger.steward [SEP] [EOP]"),
    ("who does alex stone manage", "alex stone [SEP] which.does.salary [SEP] [EOP]"),
    ("where is the club based", "alex stone [SEP] team.plays.for [SEP] club.based.in [SEP] [EOP]"),
    ("short", "t [SEP] r"),
    ("a much longer question with many words in it", "t [SEP] rel.one [SEP] rel.two"),
]


@pytest.fixture(scope="module")
def scorer() -> CrossAttentiveScorer:
    return CrossAttentiveScorer(CFG)


# ---------------------------------------------------------------------------
# Tokenizer and input assembly
# ---------------------------------------------------------------------------


class TestTokenizer:
    def test_markers_map_to_reserved_ids(self):
        tok = HashTokenizer(64)
        assert tok.encode("[CLS] [SEP] [QSP] [PSP] [EOP]") == [
            CLS_ID,
            SEP_ID,
            QSP_ID,
            PSP_ID,
            EOP_ID,
        ]

    def test_dotted_chunks_split_into_words(self):
        tok = HashTokenizer(64)
        assert tok.encode("records.filed.salary") == [
            tok.content_id("records"),
            tok.content_id("filed"),
            tok.content_id("salary"),
        ]

    def test_content_ids_stay_in_hashed_range(self):
        tok = HashTokenizer(64)
        for word in ("alpha", "beta", "gamma", "delta"):
            cid = tok.content_id(word)
            assert NUM_SPECIAL_TOKENS <= cid < NUM_SPECIAL_TOKENS + 64

    def test_hashing_is_stable_across_instances(self):
        assert HashTokenizer(4096).encode("some stable text") == HashTokenizer(
            4096
        ).encode("some stable text")


class TestInputAssembly:
    def test_exact_layout(self):
        tok = HashTokenizer(4096)
        enc = build_input_sequence(tok, "who is here", "t [SEP] rel.x [SEP] [EOP]", 32)
        h = tok.content_id
        assert enc.token_ids == (
            CLS_ID,
            SEP_ID,
            QSP_ID,
            h("who"),
            h("is"),
            h("here"),
            SEP_ID,
            PSP_ID,
            h("t"),
            SEP_ID,
            h("rel"),
            h("x"),
            SEP_ID,
            EOP_ID,
        )
        assert enc.qsp_index == 2
        assert enc.psp_index == 7
        assert enc.query_positions == (3, 4, 5)
        # Path span covers content tokens only, not separators or the end marker.
        assert enc.path_positions == (8, 10, 11)

    def test_overflow_drops_path_tail_first(self):
        tok = HashTokenizer(4096)
        enc = build_input_sequence(
            tok, "one two three", "a [SEP] b [SEP] c [SEP] d [SEP] [EOP]", 12
        )
        assert len(enc.token_ids) == 12
        full_query = tok.encode("one two three")
        assert list(enc.token_ids[3:6]) == full_query  # query kept whole
        kept_path = tok.encode("a [SEP] b [SEP] c [SEP] d [SEP] [EOP]")[:4]
        assert list(enc.token_ids[8:]) == kept_path

    def test_markers_survive_extreme_truncation(self):
        tok = HashTokenizer(4096)
        enc = build_input_sequence(tok, "q r s t u v w", "p [SEP] [EOP]", 8)
        assert len(enc.token_ids) == 8
        assert enc.token_ids[:3] == (CLS_ID, SEP_ID, QSP_ID)
        assert enc.token_ids[enc.psp_index] == PSP_ID
        assert enc.path_positions == ()  # everything after [PSP] was dropped


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


class TestInitialization:
    def test_same_seed_reproduces_parameters(self):
        a = CrossAttentiveScorer(CFG)
        b = CrossAttentiveScorer(CFG)
        for (name, pa), (_, pb) in zip(
            sorted(a.named_parameters()), sorted(b.named_parameters())
        ):
            assert torch.equal(pa, pb), name

    def test_different_seed_changes_parameters(self):
        a = CrossAttentiveScorer(CFG)
        b = CrossAttentiveScorer(ScorerConfig(**{**CFG.__dict__, "seed": 4}))
        assert not torch.equal(a.backbone.token_embedding.weight, b.backbone.token_embedding.weight)

    def test_query_and_key_projections_start_tied(self, scorer):
        d = CFG.d
        for layer in scorer.backbone.layers:
            w = layer.attn.qkv.weight
            assert torch.equal(w[:d], w[d : 2 * d])
            assert not torch.equal(w[:d], w[2 * d :])  # values stay independent


# ---------------------------------------------------------------------------
# NumPy forward oracle
# ---------------------------------------------------------------------------


def _np_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    masked = np.where(mask, logits, -np.inf)
    peak = np.max(masked, axis=-1, keepdims=True)
    exp = np.exp(masked - peak)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def _np_layer_norm(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + 1e-5) * weight + bias


_erf = np.vectorize(math.erf)


def _np_gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + _erf(x / math.sqrt(2.0)))


def numpy_forward(scorer: CrossAttentiveScorer, pairs) -> np.ndarray:
    """Independent forward pass over the scorer's own parameters."""
    cfg = scorer.cfg
    sd = {k: v.detach().cpu().numpy().astype(np.float64) for k, v in scorer.state_dict().items()}
    encoded = [scorer.encode(q, t) for q, t in pairs]
    batch = len(encoded)
    length = max(len(e.token_ids) for e in encoded)
    ids = np.zeros((batch, length), dtype=np.int64)
    key_mask = np.zeros((batch, length), dtype=bool)
    query_mask = np.zeros((batch, length), dtype=bool)
    path_mask = np.zeros((batch, length), dtype=bool)
    for i, enc in enumerate(encoded):
        ids[i, : len(enc.token_ids)] = enc.token_ids
        key_mask[i, : len(enc.token_ids)] = True
        query_mask[i, list(enc.query_positions)] = True
        path_mask[i, list(enc.path_positions)] = True

    h = sd["backbone.token_embedding.weight"][ids] + sd["backbone.position_embedding.weight"][:length][None]
    n_heads, head_dim = cfg.n_heads, cfg.d // cfg.n_heads
    for li in range(cfg.n_layers):
        p = f"backbone.layers.{li}."
        qkv = h @ sd[p + "attn.qkv.weight"].T + sd[p + "attn.qkv.bias"]
        q, k, v = np.split(qkv, 3, axis=-1)

        def split(t):
            return t.reshape(batch, length, n_heads, head_dim).transpose(0, 2, 1, 3)

        q, k, v = split(q), split(k), split(v)
        logits = q @ k.transpose(0, 1, 3, 2) / math.sqrt(head_dim)
        weights = _np_softmax(logits, key_mask[:, None, None, :])
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(batch, length, cfg.d)
        attn_out = ctx @ sd[p + "attn.out.weight"].T + sd[p + "attn.out.bias"]
        h = _np_layer_norm(h + attn_out, sd[p + "norm1.weight"], sd[p + "norm1.bias"])
        ff = _np_gelu(h @ sd[p + "ff.0.weight"].T + sd[p + "ff.0.bias"])
        ff = ff @ sd[p + "ff.2.weight"].T + sd[p + "ff.2.bias"]
        h = _np_layer_norm(h + ff, sd[p + "norm2.weight"], sd[p + "norm2.bias"])

    def cross(prefix, probe, mask):
        qv = probe @ sd[prefix + ".w_q"]
        kv = h @ sd[prefix + ".w_k"]
        logits = np.einsum("bld,bd->bl", kv, qv) / math.sqrt(cfg.d_k)
        weights = _np_softmax(logits, mask)
        return np.einsum("bl,bld->bd", weights, h)

    h_cls = h[:, 0, :]
    h_qsp = np.stack([h[i, e.qsp_index] for i, e in enumerate(encoded)])
    h_psp = np.stack([h[i, e.psp_index] for i, e in enumerate(encoded)])
    fused_q = h_qsp + cross("query_attention", h_qsp, query_mask)
    fused_p = h_psp + cross("path_attention", h_psp, path_mask)
    fused = np.concatenate([h_cls, fused_q, fused_p], axis=-1)
    hidden = np.tanh(fused @ sd["head.hidden.weight"].T + sd["head.hidden.bias"])
    z = hidden @ sd["head.out.weight"].T + sd["head.out.bias"]
    return (1.0 / (1.0 + np.exp(-z))).squeeze(-1)


class TestForwardPass:
    def test_matches_numpy_oracle(self, scorer):
        with torch.no_grad():
            got = scorer.score_pairs(PAIRS).numpy()
        expected = numpy_forward(scorer, PAIRS)
        np.testing.assert_allclose(got, expected, rtol=0, atol=1e-10)

    def test_matches_numpy_oracle_after_training_step(self, scorer):
        # The oracle must hold for arbitrary (not just freshly seeded)
        # parameters: nudge everything deterministically and recompare.
        nudged = CrossAttentiveScorer(CFG)
        with torch.no_grad():
            gen = torch.Generator().manual_seed(99)
            for _, param in sorted(nudged.named_parameters()):
                param.add_(torch.randn(param.shape, generator=gen, dtype=param.dtype) * 0.01)
        with torch.no_grad():
            got = nudged.score_pairs(PAIRS).numpy()
        np.testing.assert_allclose(got, numpy_forward(nudged, PAIRS), rtol=0, atol=1e-10)

    def test_scores_strictly_inside_unit_interval(self, scorer):
        scores = scorer.score_many(PAIRS[0][0], [t for _, t in PAIRS])
        assert all(0.0 < s < 1.0 for s in scores)

    def test_batch_composition_does_not_change_scores(self, scorer):
        alone = scorer.score_text(*PAIRS[0])
        batched = scorer.score_many(PAIRS[0][0], [PAIRS[0][1], PAIRS[2][1]])[0]
        assert alone == pytest.approx(batched, abs=1e-12)

    def test_score_text_agrees_with_score_many(self, scorer):
        q = PAIRS[0][0]
        texts = [t for _, t in PAIRS[:3]]
        many = scorer.score_many(q, texts)
        singles = [scorer.score_text(q, t) for t in texts]
        assert many == pytest.approx(singles, abs=1e-12)

    def test_empty_pairs_rejected(self, scorer):
        with pytest.raises(ValueError, match="non-empty"):
            scorer.score_pairs([])

    def test_query_without_content_rejected(self, scorer):
        with pytest.raises(ValueError, match="query has no content"):
            scorer.score_text("[SEP]", "t [SEP] r")

    def test_path_without_content_rejected(self, scorer):
        with pytest.raises(ValueError, match="path has no content"):
            scorer.score_text("a question", "[EOP]")


class TestCrossAttention:
    def test_weights_are_a_distribution(self):
        block = CrossAttentionBlock(d=4, d_k=2, dtype=torch.float64)
        with torch.no_grad():
            block.w_q.copy_(torch.eye(4, dtype=torch.float64)[:, :2])
            block.w_k.copy_(torch.eye(4, dtype=torch.float64)[:, :2])
        probe = torch.tensor([1.0, 2.0, 0.0, 0.0], dtype=torch.float64)
        kv = torch.tensor(
            [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [3.0, 3.0, 0.0, 0.0]],
            dtype=torch.float64,
        )
        with torch.no_grad():
            weights = block.attention_weights(probe, kv)
        assert float(weights.sum()) == pytest.approx(1.0, abs=1e-12)
        # Hand-computed logits: kv @ (w_q^T probe) / sqrt(2) = [1, 2, 9]/sqrt(2).
        logits = torch.tensor([1.0, 2.0, 9.0], dtype=torch.float64) / math.sqrt(2.0)
        expected = torch.softmax(logits, dim=0)
        assert torch.allclose(weights, expected, atol=1e-12)

    def test_output_is_convex_combination_of_values(self):
        block = CrossAttentionBlock(d=3, d_k=3, dtype=torch.float64)
        with torch.no_grad():
            block.w_q.copy_(torch.zeros(3, 3, dtype=torch.float64))
            block.w_k.copy_(torch.zeros(3, 3, dtype=torch.float64))
        probe = torch.tensor([5.0, -2.0, 1.0], dtype=torch.float64)
        kv = torch.tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=torch.float64)
        # Zero projections give uniform weights: the output is the mean row.
        out = cross_attention(block, probe, kv)
        assert torch.allclose(out, torch.tensor([0.5, 0.5, 0.0], dtype=torch.float64), atol=1e-12)

    def test_empty_value_set_rejected(self):
        block = CrossAttentionBlock(d=3, d_k=3, dtype=torch.float64)
        with pytest.raises(ValueError, match="at least one"):
            cross_attention(block, torch.zeros(3, dtype=torch.float64), torch.zeros(0, 3, dtype=torch.float64))


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


class TestCheckpoints:
    def test_round_trip_preserves_scores_and_manifest(self, scorer, tmp_path):
        target = tmp_path / "scorer.pt"
        save_checkpoint(scorer, str(target), manifest={"stage": "unit-test", "epoch": 7})
        loaded, manifest = load_checkpoint(str(target))
        assert manifest == {"stage": "unit-test", "epoch": 7}
        assert loaded.cfg == scorer.cfg
        q, t = PAIRS[0]
        assert loaded.score_text(q, t) == scorer.score_text(q, t)

    def test_unknown_format_version_rejected(self, scorer, tmp_path):
        target = tmp_path / "scorer.pt"
        save_checkpoint(scorer, str(target))
        payload = torch.load(str(target), weights_only=False)
        payload["format_version"] = 999
        torch.save(payload, str(target))
        with pytest.raises(ValueError, match="format version"):
            load_checkpoint(str(target))
