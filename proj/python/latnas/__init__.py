"""Latency-bucketed architecture search: Python bindings to the C++ core."""

from ._core import (
    SearchSpace,
    Violation,
    LatencyEstimator,
    Proposal,
    decode_layers,
    encode_roundtrip,
    validate,
    sample_encodings,
    sobol_points,
    structured_surrogate,
    synthetic_ackley,
    propose,
    random_propose,
    pareto_front,
    parse_message,
    serialize_message,
    __version__,
)

__all__ = [
    "SearchSpace",
    "Violation",
    "LatencyEstimator",
    "Proposal",
    "decode_layers",
    "encode_roundtrip",
    "validate",
    "sample_encodings",
    "sobol_points",
    "structured_surrogate",
    "synthetic_ackley",
    "propose",
    "random_propose",
    "pareto_front",
    "parse_message",
    "serialize_message",
    "__version__",
]
