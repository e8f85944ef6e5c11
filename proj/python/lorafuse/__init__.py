"""Retrieve, weight and merge low-rank adapters by embedding proximity."""

from ._core import (
    Library,
    compute_centroid,
    compute_weights,
    harmonic_mean,
    read_embeddings,
    run_leave_one_out,
    support_score,
    synthesize_library,
    write_embeddings,
)

__all__ = [
    "Library",
    "compute_centroid",
    "compute_weights",
    "harmonic_mean",
    "read_embeddings",
    "run_leave_one_out",
    "support_score",
    "synthesize_library",
    "write_embeddings",
]
