"""
Tests for replica streams and the worker fan-out
"""

from dataclasses import dataclass

import numpy as np
import pytest

from spde_lab.config import settings
from spde_lab.services.galerkin_sde import steps_for
from spde_lab.services.kolmogorov_mc import estimate_bel_gradient, estimate_feynman_kac, estimate_semigroup
from spde_lab.services.observables import build_observable
from spde_lab.spectral import shear_mode
from spde_lab.utils.replicas import (
    batch_increments,
    chunk_size,
    compensated_mean,
    fan_out,
    replica_increments,
)


@dataclass
class IncrementSums:
    """Per-replica sums of the Brownian increments of a small stream"""

    seed: int
    n_steps: int = 5
    dim: int = 3

    def __call__(self, start: int, stop: int):
        keys = [(1, i) for i in range(start, stop)]
        block = batch_increments(self.seed, keys, self.n_steps, self.dim, 0.01)
        return {"sum": block.sum(axis=(1, 2)), "index": np.arange(start, stop)}


@pytest.fixture
def small_chunks(monkeypatch):
    monkeypatch.setattr(settings, "chunk_memory_mb", 1)


class TestStreams:
    def test_batch_matches_single_replicas(self):
        keys = [(1, 0), (1, 1), (1, 2)]
        block = batch_increments(9, keys, 4, 2, 0.01)
        for key, row in zip(keys, block):
            np.testing.assert_array_equal(row, replica_increments(9, key, 4, 2, 0.01))

    def test_namespaces_are_independent(self):
        a = replica_increments(9, (1, 0), 4, 2, 0.01)
        b = replica_increments(9, (2, 0), 4, 2, 0.01)
        assert not np.array_equal(a, b)

    def test_chunk_size_respects_budget(self):
        assert chunk_size(20, 52, budget_mb=1) == 1024 * 1024 // (20 * 52 * 32)
        assert chunk_size(1, 1, budget_mb=64) == 512
        assert chunk_size(10 ** 7, 10 ** 3, budget_mb=1) == 1

    def test_compensated_mean(self):
        assert compensated_mean(np.array([1e16, 1.0, -1e16, 1.0])) == 0.5
        assert np.isnan(compensated_mean(np.array([])))


class TestFanOut:
    def test_replica_order_is_kept(self):
        data = fan_out(IncrementSums(seed=3), 10, 4, workers=1)
        np.testing.assert_array_equal(data["index"], np.arange(10))

    @pytest.mark.parametrize("workers", [2, 3])
    def test_process_pool_matches_inline(self, workers):
        inline = fan_out(IncrementSums(seed=3), 11, 3, workers=1)
        pooled = fan_out(IncrementSums(seed=3), 11, 3, workers=workers)
        np.testing.assert_array_equal(pooled["index"], inline["index"])
        np.testing.assert_array_equal(pooled["sum"], inline["sum"])

    def test_no_replicas(self):
        assert fan_out(IncrementSums(seed=3), 0, 4, workers=2) == {}


class TestWorkerCountIndependence:
    """Estimates are bitwise identical whether chunks run inline or in worker processes"""

    T = 0.2

    def _pair(self, make_cfg, **kwargs):
        return make_cfg(T=self.T, workers=1, **kwargs), make_cfg(T=self.T, workers=2, **kwargs)

    def test_several_chunks_are_used(self, make_cfg, small_chunks):
        cfg = make_cfg(T=self.T)
        assert 70 > chunk_size(steps_for(self.T, cfg.dt), cfg.space.dim)

    def test_semigroup_and_feynman_kac(self, make_cfg, shear, small_chunks):
        serial, parallel = self._pair(make_cfg)
        phi = build_observable("norm-sq", serial.space)
        for estimate in (
            lambda cfg: estimate_semigroup(phi, self.T, shear, cfg, 70),
            lambda cfg: estimate_feynman_kac(phi, 1.0, self.T, shear, cfg, 70),
        ):
            a, b = estimate(serial), estimate(parallel)
            assert a.value == b.value
            assert a.stderr == b.stderr
            assert a.samples == b.samples

    def test_bel_gradient(self, make_cfg, shear, small_chunks):
        serial, parallel = self._pair(make_cfg)
        phi = build_observable("tanh-energy", serial.space)
        h = shear_mode(serial.space, (0, 1, 0), (0.0, 0.0, 1.0), 1.0)
        a = estimate_bel_gradient(phi, 1.0, self.T, shear, h, serial, 40)
        b = estimate_bel_gradient(phi, 1.0, self.T, shear, h, parallel, 40)
        assert a.value == b.value
        assert a.stderr == b.stderr
