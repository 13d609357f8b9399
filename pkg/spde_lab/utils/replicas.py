"""
Reproducible replica streams and fan-out

Replica r of a run with seed s draws from
Generator(PCG64(SeedSequence(s, spawn_key=(namespace, r, ...)))), and all of
its Brownian increments are drawn in a single call. Chunking replicas into
batches, or spreading the batches over worker processes, therefore never
changes a single sample.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger

from ..config import settings

ReplicaTask = Callable[[int, int], Dict[str, np.ndarray]]


def replica_generator(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream identified by (seed, key)"""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def replica_increments(seed: int, key: Sequence[int], n_steps: int, dim: int, dt: float) -> np.ndarray:
    """Brownian increments of one replica, shape (n_steps, dim), variance dt per coordinate"""
    rng = replica_generator(seed, *key)
    return rng.standard_normal((n_steps, dim)) * math.sqrt(dt)


def batch_increments(seed: int, keys: Sequence[Sequence[int]], n_steps: int, dim: int, dt: float) -> np.ndarray:
    """Increments for a batch of replicas, shape (batch, n_steps, dim)"""
    if not keys:
        return np.zeros((0, n_steps, dim))
    return np.stack([replica_increments(seed, key, n_steps, dim, dt) for key in keys])


def chunk_size(n_steps: int, dim: int, budget_mb: Optional[int] = None) -> int:
    """Replicas per batch so that the increment block stays within the memory budget"""
    budget = (budget_mb or settings.chunk_memory_mb) * 1024 * 1024
    per_replica = max(1, n_steps) * dim * 8 * 4
    return int(max(1, min(512, budget // per_replica)))


def fan_out(task: ReplicaTask, n: int, chunk: int, workers: Optional[int] = None) -> Dict[str, np.ndarray]:
    """
    Run task over replica ranges [start, stop) and concatenate results in replica order

    Args:
        task: Picklable callable returning per-replica arrays for a range
        n: Number of replicas
        chunk: Replicas per range; fixed independently of the worker count
        workers: Process count; 1 runs inline

    Returns:
        Dictionary of per-replica arrays of leading length n
    """
    workers = workers or settings.workers
    starts = list(range(0, n, chunk))
    stops = [min(start + chunk, n) for start in starts]

    if workers > 1 and len(starts) > 1:
        logger.debug(f"Fanning {n} replicas over {workers} workers in {len(starts)} chunks")
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts: List[Dict[str, np.ndarray]] = list(pool.map(task, starts, stops))
    else:
        parts = [task(start, stop) for start, stop in zip(starts, stops)]

    if not parts:
        return {}
    return {key: np.concatenate([part[key] for part in parts]) for key in parts[0]}


def compensated_mean(values: np.ndarray) -> float:
    """Order-exact mean via compensated summation"""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        return float("nan")
    if np.all(values == values[0]):
        return float(values[0])
    return math.fsum(values) / values.size


def sample_stderr(values: np.ndarray) -> float:
    """Sample standard deviation over sqrt(n)"""
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 2 or np.all(values == values[0]):
        return 0.0
    mean = compensated_mean(values)
    variance = math.fsum((values - mean) ** 2) / (values.size - 1)
    return math.sqrt(variance / values.size)
