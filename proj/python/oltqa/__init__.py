"""Long-tail open-world QA core (C++ extension)."""

from ._oltqa import (
    Bm25Index,
    InvalidArgument,
    MockOracle,
    OracleError,
    PreconditionError,
    active_edges,
    bleu,
    curate_corpus,
    default_config_ini,
    downsample_sizes,
    exact_match,
    f1_token_overlap,
    key_loss,
    kl_divergence,
    rouge_l,
    score_prediction,
    serialize,
    softmax,
    train,
    validate_config,
    write_synthetic_suite,
    zipf_weights,
)

__all__ = [
    "Bm25Index",
    "InvalidArgument",
    "MockOracle",
    "OracleError",
    "PreconditionError",
    "active_edges",
    "bleu",
    "curate_corpus",
    "default_config_ini",
    "downsample_sizes",
    "exact_match",
    "f1_token_overlap",
    "key_loss",
    "kl_divergence",
    "rouge_l",
    "score_prediction",
    "serialize",
    "softmax",
    "train",
    "validate_config",
    "write_synthetic_suite",
    "zipf_weights",
]
