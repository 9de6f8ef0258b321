"""Pluggable sentence-pair similarity.

Two backends sit behind one interface: a deterministic hashed bag-of-words
cosine used by all algorithmic tests (no model downloads), and an adapter
for an external pretrained sentence encoder for production use. Paths are
compared through their serialized text form.
"""

from __future__ import annotations

import hashlib
import re
from typing import Protocol, Sequence

import numpy as np

_WORD_RE = re.compile(r"[a-z0-9]+")


def words(text: str) -> list[str]:
    """Lowercased alphanumeric word tokens of ``text``."""
    return _WORD_RE.findall(text.lower())


class SimilarityModel(Protocol):
    """Embedding backend contract: deterministic, symmetric, unit self-sim."""

    backend_id: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedBagOfWordsSimilarity:
    """Reference backend: binary bag-of-words hashed into a fixed dimension.

    Token presence (not counts) drives the vector, so the cosine of two
    texts with disjoint tokens is exactly 0 and of identical texts exactly 1.
    """

    def __init__(self, dim: int = 4096):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.backend_id = "hashed-bow"
        self.dim = dim

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dim

    def embed(self, text: str) -> np.ndarray:
        vector = np.zeros(self.dim, dtype=np.float64)
        for token in set(words(text)):
            vector[self._bucket(token)] = 1.0
        return vector

    def manifest_info(self) -> dict:
        return {"backend": self.backend_id, "dim": self.dim}


class SentenceEncoderSimilarity:
    """Adapter for an external pretrained sentence encoder.

    The encoder object only needs an ``encode(list_of_texts) -> array``
    method; by default it is loaded lazily through ``sentence_transformers``.
    """

    def __init__(self, model_id: str, encoder=None):
        self.backend_id = f"sentence-encoder:{model_id}"
        self.model_id = model_id
        if encoder is None:
            from sentence_transformers import SentenceTransformer

            encoder = SentenceTransformer(model_id)
        self._encoder = encoder
        probe = np.asarray(self._encoder.encode([" "]))
        self.dim = int(probe.shape[-1])

    def embed(self, text: str) -> np.ndarray:
        return np.asarray(self._encoder.encode([text]), dtype=np.float64).reshape(-1)

    def manifest_info(self) -> dict:
        return {"backend": "sentence-encoder", "model_id": self.model_id, "dim": self.dim}


def build_similarity_model(backend: str, dim: int = 4096) -> SimilarityModel:
    """Instantiate a backend from a configuration key.

    ``"reference"`` selects the hashed bag-of-words backend;
    ``"sentence-encoder:<model_id>"`` selects the external encoder adapter.
    """
    if backend == "reference":
        return HashedBagOfWordsSimilarity(dim=dim)
    if backend.startswith("sentence-encoder:"):
        return SentenceEncoderSimilarity(backend.split(":", 1)[1])
    raise ValueError(f"unknown similarity backend: {backend!r}")


def sim(model: SimilarityModel, a: str, b: str) -> float:
    """Cosine similarity of the backend embeddings of two non-empty texts."""
    if not a.strip() or not b.strip():
        raise ValueError("similarity inputs must be non-empty")
    va, vb = model.embed(a), model.embed(b)
    na, nb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(va, vb) / (na * nb))


def top_k_similar(
    model: SimilarityModel, anchor: str, candidates: Sequence[str], k: int
) -> list[str]:
    """The ``k`` candidates most similar to ``anchor``, ties lexicographic.

    The output is a prefix of the full similarity-sorted candidate list;
    fewer than ``k`` candidates are all returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(candidates, key=lambda c: (-sim(model, anchor, c), c))
    return ranked[:k]
