"""Single-tower query/path relevance scorer.

The scorer builds one joint token sequence per (query, path) pair, runs a
small trained-from-scratch transformer encoder over it, lets the [QSP] and
[PSP] marker tokens aggregate their respective spans through explicit
cross-attention, and maps the fused representations to a relevance score
in (0, 1).

Parameters are immutable during inference, so concurrent scoring is safe;
training mutates them from a single writer.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import torch
from torch import nn

from .graph import CLS_TOKEN, EOP_RELATION, PSP_TOKEN, QSP_TOKEN, SEP_TOKEN
from .similarity import words

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
QSP_ID = 3
PSP_ID = 4
EOP_ID = 5
NUM_SPECIAL_TOKENS = 6

_MARKER_IDS = {
    CLS_TOKEN: CLS_ID,
    SEP_TOKEN: SEP_ID,
    QSP_TOKEN: QSP_ID,
    PSP_TOKEN: PSP_ID,
    EOP_RELATION: EOP_ID,
}


@dataclass(frozen=True)
class ScorerConfig:
    """Architecture hyperparameters and special-token assignments."""

    d: int = 64
    d_k: int = 32
    n_layers: int = 2
    n_heads: int = 2
    max_seq_len: int = 64
    vocab_buckets: int = 4096
    backbone_id: str = "tiny-transformer"
    seed: int = 0
    dtype: str = "float64"
    special_token_ids: dict = field(
        default_factory=lambda: dict(
            cls=CLS_ID, sep=SEP_ID, qsp=QSP_ID, psp=PSP_ID, eop=EOP_ID
        )
    )

    def __post_init__(self) -> None:
        if self.d < 1 or self.d_k < 1:
            raise ValueError("d and d_k must be >= 1")
        if self.d % self.n_heads != 0:
            raise ValueError("d must be divisible by n_heads")
        ids = list(self.special_token_ids.values())
        if len(set(ids)) != len(ids):
            raise ValueError("special token ids must be distinct")

    @property
    def vocab_size(self) -> int:
        return NUM_SPECIAL_TOKENS + self.vocab_buckets

    @property
    def torch_dtype(self) -> torch.dtype:
        return {"float64": torch.float64, "float32": torch.float32}[self.dtype]


class HashTokenizer:
    """Word-level tokenizer with a fixed hashed vocabulary.

    Marker tokens map to reserved ids; every other whitespace chunk is
    split into lowercase alphanumeric words, each hashed into one of
    ``vocab_buckets`` content ids. Hashing is stable across processes.
    """

    def __init__(self, vocab_buckets: int):
        self.vocab_buckets = vocab_buckets

    def content_id(self, word: str) -> int:
        digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
        return NUM_SPECIAL_TOKENS + int.from_bytes(digest, "big") % self.vocab_buckets

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for chunk in text.split():
            if chunk in _MARKER_IDS:
                ids.append(_MARKER_IDS[chunk])
            else:
                ids.extend(self.content_id(w) for w in words(chunk))
        return ids


@dataclass(frozen=True)
class EncodedInput:
    """A joint token sequence plus the span bookkeeping the scorer needs."""

    token_ids: tuple[int, ...]
    qsp_index: int
    psp_index: int
    query_positions: tuple[int, ...]
    path_positions: tuple[int, ...]


def build_input_sequence(
    tokenizer: HashTokenizer, query: str, path_text: str, max_seq_len: int
) -> EncodedInput:
    """Assemble ``[CLS] [SEP] [QSP] <query> [SEP] [PSP] <path>``.

    On overflow, path tokens are dropped from the tail first, then query
    tokens; the five structural markers are never dropped. The query and
    path spans cover content tokens only (in-path separators and the
    end-of-path marker are excluded).
    """
    query_ids = tokenizer.encode(query)
    path_ids = tokenizer.encode(path_text)
    budget = max_seq_len - 5
    if len(query_ids) + len(path_ids) > budget:
        path_ids = path_ids[: max(0, budget - len(query_ids))]
        query_ids = query_ids[:budget]

    ids = [CLS_ID, SEP_ID, QSP_ID]
    query_positions = tuple(
        range(len(ids), len(ids) + len(query_ids))
    )
    ids.extend(query_ids)
    ids.append(SEP_ID)
    psp_index = len(ids)
    ids.append(PSP_ID)
    path_start = len(ids)
    ids.extend(path_ids)
    path_positions = tuple(
        path_start + i
        for i, tid in enumerate(path_ids)
        if tid >= NUM_SPECIAL_TOKENS
    )
    query_positions = tuple(
        p for p in query_positions if ids[p] >= NUM_SPECIAL_TOKENS
    )
    return EncodedInput(tuple(ids), 2, psp_index, query_positions, path_positions)


def _init_normal(param: torch.Tensor, generator: torch.Generator, std: float) -> None:
    with torch.no_grad():
        param.copy_(torch.randn(param.shape, generator=generator, dtype=param.dtype) * std)


class _SelfAttention(nn.Module):
    def __init__(self, d: int, n_heads: int, dtype: torch.dtype):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.qkv = nn.Linear(d, 3 * d, dtype=dtype)
        self.out = nn.Linear(d, d, dtype=dtype)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        # x: (B, L, d); key_mask: (B, L) True where the position is real.
        bsz, length, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(bsz, length, self.n_heads, self.head_dim).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        logits = logits.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        ctx = (weights @ v).transpose(1, 2).reshape(bsz, length, -1)
        return self.out(ctx)


class _EncoderLayer(nn.Module):
    def __init__(self, d: int, n_heads: int, dtype: torch.dtype):
        super().__init__()
        self.attn = _SelfAttention(d, n_heads, dtype)
        self.norm1 = nn.LayerNorm(d, dtype=dtype)
        self.ff = nn.Sequential(
            nn.Linear(d, 4 * d, dtype=dtype), nn.GELU(), nn.Linear(4 * d, d, dtype=dtype)
        )
        self.norm2 = nn.LayerNorm(d, dtype=dtype)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.attn(x, key_mask))
        return self.norm2(x + self.ff(x))


class TransformerEncoderBackbone(nn.Module):
    """Contextual encoder: one hidden-state row per input token.

    Post-layer-norm blocks, learned position embeddings, no dropout, so
    evaluation is deterministic and output row count equals input length.
    """

    def __init__(self, cfg: ScorerConfig):
        super().__init__()
        dtype = cfg.torch_dtype
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.d, dtype=dtype)
        self.position_embedding = nn.Embedding(cfg.max_seq_len, cfg.d, dtype=dtype)
        self.layers = nn.ModuleList(
            _EncoderLayer(cfg.d, cfg.n_heads, dtype) for _ in range(cfg.n_layers)
        )

    def forward(self, token_ids: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(token_ids.shape[1], device=token_ids.device)
        h = self.token_embedding(token_ids) + self.position_embedding(positions)[None, :, :]
        for layer in self.layers:
            h = layer(h, key_mask)
        return h


class CrossAttentionBlock(nn.Module):
    """Query/key-projected attention whose values stay unprojected.

    Only the probe and the keys pass through learned maps; the output is a
    convex combination of the raw value rows.
    """

    def __init__(self, d: int, d_k: int, dtype: torch.dtype):
        super().__init__()
        self.w_q = nn.Parameter(torch.empty(d, d_k, dtype=dtype))
        self.w_k = nn.Parameter(torch.empty(d, d_k, dtype=dtype))
        self.d_k = d_k

    def attend(
        self,
        probe: torch.Tensor,
        keys_values: torch.Tensor,
        mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        # probe: (..., d); keys_values: (..., n, d); mask: (..., n), True=attendable.
        q = probe @ self.w_q
        k = keys_values @ self.w_k
        logits = (k @ q.unsqueeze(-1)).squeeze(-1) / math.sqrt(self.d_k)
        if mask is not None:
            logits = logits.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        return (weights.unsqueeze(-2) @ keys_values).squeeze(-2)

    def attention_weights(
        self, probe: torch.Tensor, keys_values: torch.Tensor
    ) -> torch.Tensor:
        q = probe @ self.w_q
        k = keys_values @ self.w_k
        logits = (k @ q.unsqueeze(-1)).squeeze(-1) / math.sqrt(self.d_k)
        return torch.softmax(logits, dim=-1)


def cross_attention(
    block: CrossAttentionBlock, probe: torch.Tensor, keys_values: torch.Tensor
) -> torch.Tensor:
    """Attend ``probe`` over the rows of ``keys_values`` (at least one row)."""
    if keys_values.shape[0] == 0:
        raise ValueError("cross attention needs at least one attendable row")
    return block.attend(probe, keys_values)


class ScoreHead(nn.Module):
    """Feed-forward map from the fused ``3d`` representation to a score.

    One hidden layer of width ``d`` with a smooth nonlinearity, then a
    linear map to a scalar squashed by a sigmoid; output is strictly
    inside (0, 1).
    """

    def __init__(self, d: int, dtype: torch.dtype):
        super().__init__()
        self.hidden = nn.Linear(3 * d, d, dtype=dtype)
        self.out = nn.Linear(d, 1, dtype=dtype)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.out(torch.tanh(self.hidden(fused)))).squeeze(-1)


class CrossAttentiveScorer(nn.Module):
    """Full scorer: backbone, two cross-attention blocks, score head."""

    def __init__(self, cfg: ScorerConfig):
        super().__init__()
        self.cfg = cfg
        self.tokenizer = HashTokenizer(cfg.vocab_buckets)
        dtype = cfg.torch_dtype
        self.backbone = TransformerEncoderBackbone(cfg)
        self.query_attention = CrossAttentionBlock(cfg.d, cfg.d_k, dtype)
        self.path_attention = CrossAttentionBlock(cfg.d, cfg.d_k, dtype)
        self.head = ScoreHead(cfg.d, dtype)
        self._seed_parameters(cfg.seed)

    def _seed_parameters(self, seed: int) -> None:
        generator = torch.Generator().manual_seed(seed)
        # Width-aware scale: with layer-normalized hidden rows, attention
        # logits grow like std**2 * d, so std = 1/sqrt(d) keeps them O(1).
        # A fixed small std would leave every attention pattern near
        # uniform at init and the query/path interaction without gradient.
        std = self.cfg.d ** -0.5
        for name, param in sorted(self.named_parameters(), key=lambda kv: kv[0]):
            if param.dim() >= 2 or "embedding" in name or name.endswith(("w_q", "w_k")):
                _init_normal(param, generator, std)
            elif "norm" in name and name.endswith("weight"):
                nn.init.ones_(param)
            else:
                nn.init.zeros_(param)
        # Start each self-attention layer with identical query and key
        # projections. Two positions holding the same token then begin with
        # an elevated attention logit (a dot product of a vector with
        # itself), so "this path token also occurs in the query" is a
        # usable feature before any training. From random independent
        # projections, a small from-scratch backbone has to discover
        # token-identity matching first, which dominates training time on
        # small corpora. The projections untie as soon as gradients flow.
        with torch.no_grad():
            d = self.cfg.d
            for layer in self.backbone.layers:
                weight = layer.attn.qkv.weight
                weight[d : 2 * d].copy_(weight[:d])

    def encode(self, query: str, path_text: str) -> EncodedInput:
        return build_input_sequence(self.tokenizer, query, path_text, self.cfg.max_seq_len)

    def score_pairs(self, pairs: Sequence[tuple[str, str]]) -> torch.Tensor:
        """Scores for (query, serialized path) pairs, as a 1-D tensor.

        Batch composition does not affect individual results: padded
        positions are masked out of every attention computation.
        """
        if not pairs:
            raise ValueError("pairs must be non-empty")
        encoded = [self.encode(query, text) for query, text in pairs]
        for (query, _), enc in zip(pairs, encoded):
            if not enc.query_positions:
                raise ValueError(f"query has no content tokens: {query!r}")
            if not enc.path_positions:
                raise ValueError("path has no content tokens")
        max_len = max(len(e.token_ids) for e in encoded)
        device = self.head.out.weight.device
        batch = torch.full((len(encoded), max_len), PAD_ID, dtype=torch.long, device=device)
        key_mask = torch.zeros((len(encoded), max_len), dtype=torch.bool, device=device)
        query_mask = torch.zeros_like(key_mask)
        path_mask = torch.zeros_like(key_mask)
        for i, enc in enumerate(encoded):
            batch[i, : len(enc.token_ids)] = torch.tensor(enc.token_ids, dtype=torch.long)
            key_mask[i, : len(enc.token_ids)] = True
            query_mask[i, list(enc.query_positions)] = True
            path_mask[i, list(enc.path_positions)] = True

        hidden = self.backbone(batch, key_mask)
        h_cls = hidden[:, 0, :]
        h_qsp = torch.stack([hidden[i, e.qsp_index] for i, e in enumerate(encoded)])
        h_psp = torch.stack([hidden[i, e.psp_index] for i, e in enumerate(encoded)])
        fused_q = h_qsp + self.query_attention.attend(h_qsp, hidden, query_mask)
        fused_p = h_psp + self.path_attention.attend(h_psp, hidden, path_mask)
        return self.head(torch.cat([h_cls, fused_q, fused_p], dim=-1))

    def score_texts(self, query: str, path_texts: Sequence[str]) -> torch.Tensor:
        """Scores for several serialized paths against one query."""
        return self.score_pairs([(query, text) for text in path_texts])

    def score_text(self, query: str, path_text: str) -> float:
        with torch.no_grad():
            return float(self.score_texts(query, [path_text])[0])

    def score_many(self, query: str, path_texts: Sequence[str]) -> list[float]:
        with torch.no_grad():
            return [float(s) for s in self.score_texts(query, path_texts)]


CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(scorer: CrossAttentiveScorer, path: str, manifest: dict | None = None) -> None:
    """Persist config, parameters, and run provenance as one archive."""
    torch.save(
        {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "backbone_id": scorer.cfg.backbone_id,
            "config": asdict(scorer.cfg),
            "state_dict": scorer.state_dict(),
            "manifest": dict(manifest or {}),
        },
        path,
    )


def load_checkpoint(path: str) -> tuple[CrossAttentiveScorer, dict]:
    payload = torch.load(path, weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version}")
    cfg = ScorerConfig(**payload["config"])
    scorer = CrossAttentiveScorer(cfg)
    scorer.load_state_dict(payload["state_dict"])
    return scorer, payload["manifest"]
