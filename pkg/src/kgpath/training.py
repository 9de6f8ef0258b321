"""Contrastive training of the path scorer with frequency-aware weights.

The base loss is softmax cross-entropy over one positive score and the
currently highest-scoring negatives; the weighted variant multiplies each
participant's exponentiated score by its graph-contextual weight. Both are
computed in the log domain for stability.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import torch

from .graph import parse_serialized_path
from .mining import CorpusInstance
from .scorer import CrossAttentiveScorer, save_checkpoint
from .seeding import rng_for
from .weighting import ClassCounts, Signature, compute_weights, count_occurrences

log = logging.getLogger(__name__)

#: Weight-decay strength for the scorer's final scalar layer; see the
#: optimizer construction in :func:`train` for why this layer is decayed.
_SCORE_SCALE_DECAY = 1.0


def _as_score(value) -> torch.Tensor:
    if torch.is_tensor(value):
        return value
    return torch.tensor(float(value), dtype=torch.float64)


def _stack(values: Sequence[torch.Tensor]) -> torch.Tensor:
    dtype = values[0].dtype
    for v in values[1:]:
        dtype = torch.promote_types(dtype, v.dtype)
    return torch.stack([v.to(dtype) for v in values])


def loss_shc(s_pos, negatives: Sequence) -> torch.Tensor:
    """Softmax cross-entropy with the positive as target: log-sum-exp − s_pos.

    Zero when there are no negatives. Accepts floats or tensors; tensors
    keep their gradient history.
    """
    pos = _as_score(s_pos)
    if len(negatives) == 0:
        return pos - pos
    scores = _stack([pos] + [_as_score(v) for v in negatives])
    return torch.logsumexp(scores, dim=0) - pos


def loss_star(s_pos, w_pos, negatives: Sequence[tuple]) -> torch.Tensor:
    """Weighted contrastive loss; reduces to :func:`loss_shc` at unit weights.

    Each participant contributes weight × exp(score); the loss is the
    negative log share of the positive. Weights must be strictly positive.
    """
    if float(w_pos) <= 0:
        raise ValueError("positive weight must be > 0")
    for _, w in negatives:
        if float(w) <= 0:
            raise ValueError("negative weights must be > 0")
    pos = _as_score(s_pos) + torch.log(_as_score(w_pos))
    if len(negatives) == 0:
        return pos - pos
    terms = [pos] + [_as_score(s) + torch.log(_as_score(w)) for s, w in negatives]
    return torch.logsumexp(_stack(terms), dim=0) - pos


def select_topk_negatives(
    scorer: CrossAttentiveScorer, question: str, instance: CorpusInstance, k: int
) -> list[str]:
    """The ≤k negatives of an instance the current model scores highest.

    Ties break lexicographically on the serialized path so reselection is
    deterministic.
    """
    negatives = list(instance.negatives)
    if len(negatives) <= k:
        return sorted(negatives)
    scores = scorer.score_many(question, negatives)
    ranked = sorted(zip(negatives, scores), key=lambda ns: (-ns[1], ns[0]))
    return [text for text, _ in ranked[:k]]


@dataclass(frozen=True)
class TrainingConfig:
    """Optimization and weighting settings for one training run."""

    k_negatives: int = 15
    w_plus: float = 3.0
    w_minus: float = 0.5
    learning_rate: float = 3e-5
    epochs: int = 50
    split_ratio: float = 0.9
    seed: int = 0
    batch_size: int = 8
    weighted: bool = True

    def __post_init__(self) -> None:
        if self.w_minus > self.w_plus:
            raise ValueError("w_minus must not exceed w_plus")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must lie in (0, 1)")
        if self.k_negatives < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("k_negatives, batch_size >= 1 and epochs >= 0 required")


@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    best_val_loss: float
    counts: ClassCounts


def _signature(text: str) -> Signature:
    return parse_serialized_path(text).relation_signature


def _batch_losses(
    scorer: CrossAttentiveScorer,
    instances: Sequence[CorpusInstance],
    selections: Sequence[list[str]],
    pos_weights: Mapping[Signature, float],
    neg_weights: Mapping[Signature, float],
    weighted: bool,
) -> torch.Tensor:
    """Mean instance loss over one batch, with gradient history."""
    pairs: list[tuple[str, str]] = []
    spans: list[tuple[int, int]] = []
    for instance, selected in zip(instances, selections):
        start = len(pairs)
        pairs.append((instance.question, instance.positive))
        pairs.extend((instance.question, text) for text in selected)
        spans.append((start, len(pairs)))
    scores = scorer.score_pairs(pairs)
    losses = []
    for instance, selected, (start, end) in zip(instances, selections, spans):
        s_pos = scores[start]
        s_negs = scores[start + 1 : end]
        if weighted:
            w_pos = pos_weights.get(_signature(instance.positive), 1.0)
            negs = [
                (s_negs[i], neg_weights.get(_signature(text), 1.0))
                for i, text in enumerate(selected)
            ]
            losses.append(loss_star(s_pos, w_pos, negs))
        else:
            losses.append(loss_shc(s_pos, list(s_negs)))
    return _stack(losses).mean()


def _dataset_loss(
    scorer: CrossAttentiveScorer,
    instances: Sequence[CorpusInstance],
    selections: Sequence[list[str]],
    pos_weights: Mapping[Signature, float],
    neg_weights: Mapping[Signature, float],
    weighted: bool,
    batch_size: int,
) -> float:
    if not instances:
        return float("nan")
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(instances), batch_size):
            chunk = instances[i : i + batch_size]
            chunk_sel = selections[i : i + batch_size]
            loss = _batch_losses(
                scorer, chunk, chunk_sel, pos_weights, neg_weights, weighted
            )
            total += float(loss) * len(chunk)
    return total / len(instances)


def train(
    corpus: Sequence[CorpusInstance],
    cfg: TrainingConfig,
    scorer: CrossAttentiveScorer,
    log_path: str | None = None,
    checkpoint_path: str | None = None,
    manifest_extra: dict | None = None,
) -> TrainResult:
    """Optimize the scorer on a mined corpus; keep the best-validation state.

    Negatives are reselected with the current model once per epoch. The
    epoch-0 log row records pre-training losses; the scorer ends loaded
    with the best-validation parameters. Non-finite losses abort.
    """
    if not corpus:
        raise ValueError("training corpus is empty")

    counts = count_occurrences(corpus)
    pos_weights, neg_weights = compute_weights(counts, cfg.w_minus, cfg.w_plus)

    order = rng_for(cfg.seed, "train-split").permutation(len(corpus))
    n_val = min(len(corpus) - 1, int(round((1.0 - cfg.split_ratio) * len(corpus))))
    val_set = [corpus[i] for i in sorted(order[:n_val])]
    train_set = [corpus[i] for i in sorted(order[n_val:])]
    log.info("training on %d instances, validating on %d", len(train_set), len(val_set))

    # The contrastive objective keeps a nonzero gradient even on already
    # well-ranked instances (the softmax is taken over sigmoid outputs, so
    # the positive's share never approaches one). Under Adam's normalized
    # steps that residual steadily inflates the pre-sigmoid logits until
    # the sigmoid's derivative vanishes, freezing whatever has not been
    # learned yet — typically every minority class. Decoupled weight decay
    # on the final scalar layer, the only place logit scale can live (all
    # its inputs pass through tanh or layer normalization), balances the
    # residual at a finite logit magnitude and keeps gradients flowing.
    # The faster second-moment decay suits the small number of optimizer
    # steps per epoch on corpora of this size.
    head_out = {
        name for name, _ in scorer.named_parameters() if name.startswith("head.out")
    }
    optimizer = torch.optim.AdamW(
        [
            {
                "params": [p for n, p in scorer.named_parameters() if n not in head_out],
                "weight_decay": 0.0,
            },
            {
                "params": [p for n, p in scorer.named_parameters() if n in head_out],
                "weight_decay": _SCORE_SCALE_DECAY,
            },
        ],
        lr=cfg.learning_rate,
        betas=(0.9, 0.99),
    )

    def reselect(instances: Sequence[CorpusInstance]) -> list[list[str]]:
        with torch.no_grad():
            return [
                select_topk_negatives(scorer, inst.question, inst, cfg.k_negatives)
                for inst in instances
            ]

    def snapshot() -> dict:
        return {k: v.detach().clone() for k, v in scorer.state_dict().items()}

    history: list[dict] = []
    started = time.perf_counter()
    train_sel = reselect(train_set)
    val_sel = reselect(val_set)
    train_loss = _dataset_loss(
        scorer, train_set, train_sel, pos_weights, neg_weights, cfg.weighted, cfg.batch_size
    )
    val_loss = _dataset_loss(
        scorer, val_set, val_sel, pos_weights, neg_weights, cfg.weighted, cfg.batch_size
    )
    monitored = val_loss if val_set else train_loss
    history.append(
        {
            "epoch": 0,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "seconds": time.perf_counter() - started,
        }
    )
    best_epoch, best_val, best_state = 0, monitored, snapshot()

    for epoch in range(1, cfg.epochs + 1):
        epoch_start = time.perf_counter()
        train_sel = reselect(train_set)
        perm = rng_for(cfg.seed, "epoch-order", str(epoch)).permutation(len(train_set))
        running, seen = 0.0, 0
        for i in range(0, len(perm), cfg.batch_size):
            idx = [int(j) for j in perm[i : i + cfg.batch_size]]
            chunk = [train_set[j] for j in idx]
            chunk_sel = [train_sel[j] for j in idx]
            loss = _batch_losses(
                scorer, chunk, chunk_sel, pos_weights, neg_weights, cfg.weighted
            )
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            running += float(loss.detach()) * len(chunk)
            seen += len(chunk)
        train_loss = running / max(seen, 1)
        val_sel = reselect(val_set)
        val_loss = _dataset_loss(
            scorer, val_set, val_sel, pos_weights, neg_weights, cfg.weighted, cfg.batch_size
        )
        monitored = val_loss if val_set else train_loss
        history.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "seconds": time.perf_counter() - epoch_start,
            }
        )
        if monitored < best_val:
            best_epoch, best_val, best_state = epoch, monitored, snapshot()

    scorer.load_state_dict(best_state)

    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            for row in history:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    if checkpoint_path is not None:
        manifest = {
            "training_config": asdict(cfg),
            "best_epoch": best_epoch,
            "best_val_loss": best_val,
            "n_train": len(train_set),
            "n_val": len(val_set),
        }
        manifest.update(manifest_extra or {})
        save_checkpoint(scorer, checkpoint_path, manifest)
    return TrainResult(history, best_epoch, best_val, counts)
