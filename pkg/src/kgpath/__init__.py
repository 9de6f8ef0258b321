"""Knowledge-graph path retrieval for graph-augmented generation.

A trainable cross-attentive scorer ranks relation paths between query
topic entities and candidate answers; training data comes from hard path
mining over the graph, the loss reweights rare paths, and inference runs
scorer-guided beam search with answer generation on top.
"""

from .graph import (
    EOP_RELATION,
    IngestError,
    KnowledgeGraph,
    Path,
    Triple,
    UnknownEntityError,
    extract_subgraph,
    load_graph,
    parse_serialized_path,
    relations_of,
    save_graph,
    serialize_path,
    shortest_paths,
    tails,
)
from .inference import (
    InferenceConfig,
    ScoredBeamItem,
    SimilarityBeamScorer,
    beam_search,
    generate_answer,
    retrieve_and_answer,
    topk_select,
)
from .mining import (
    QueryRecord,
    TrainingInstance,
    build_training_set,
    curate_hard_negatives,
    curate_hard_positives,
    load_queries,
    load_training_corpus,
)
from .scorer import (
    CrossAttentionBlock,
    CrossAttentiveScorer,
    ScorerConfig,
    build_input_sequence,
    cross_attention,
    load_checkpoint,
    save_checkpoint,
)
from .similarity import (
    HashedBagOfWordsSimilarity,
    SentenceEncoderSimilarity,
    build_similarity_model,
    sim,
    top_k_similar,
)
from .training import (
    TrainingConfig,
    loss_shc,
    loss_star,
    select_topk_negatives,
    train,
)
from .weighting import compute_weights, count_occurrences

__version__ = "0.1.0"

__all__ = [
    "EOP_RELATION",
    "IngestError",
    "KnowledgeGraph",
    "Path",
    "Triple",
    "UnknownEntityError",
    "extract_subgraph",
    "load_graph",
    "parse_serialized_path",
    "relations_of",
    "save_graph",
    "serialize_path",
    "shortest_paths",
    "tails",
    "InferenceConfig",
    "ScoredBeamItem",
    "SimilarityBeamScorer",
    "beam_search",
    "generate_answer",
    "retrieve_and_answer",
    "topk_select",
    "QueryRecord",
    "TrainingInstance",
    "build_training_set",
    "curate_hard_negatives",
    "curate_hard_positives",
    "load_queries",
    "load_training_corpus",
    "CrossAttentionBlock",
    "CrossAttentiveScorer",
    "ScorerConfig",
    "build_input_sequence",
    "cross_attention",
    "load_checkpoint",
    "save_checkpoint",
    "HashedBagOfWordsSimilarity",
    "SentenceEncoderSimilarity",
    "build_similarity_model",
    "sim",
    "top_k_similar",
    "TrainingConfig",
    "loss_shc",
    "loss_star",
    "select_topk_negatives",
    "train",
    "compute_weights",
    "count_occurrences",
    "__version__",
]
