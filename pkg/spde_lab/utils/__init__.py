"""
Utilities for spde-lab
"""

from .replicas import (
    batch_increments,
    chunk_size,
    compensated_mean,
    fan_out,
    replica_generator,
    replica_increments,
    sample_stderr,
)

__all__ = [
    "batch_increments",
    "chunk_size",
    "compensated_mean",
    "fan_out",
    "replica_generator",
    "replica_increments",
    "sample_stderr",
]
