"""
Tests for the semi-implicit Galerkin integrator
"""

import numpy as np
import pytest

from spde_lab.exceptions import BlowUpError, InvalidArgumentError
from spde_lab.services.galerkin_sde import (
    ESTIMATE_STREAM,
    deterministic_solve,
    increments_for,
    iterate_batch,
    ou_second_moment,
    replay,
    simulate,
    simulate_with_variation,
    steps_for,
)
from spde_lab.spectral import SpectralField, random_field, shear_mode
from spde_lab.utils.checkpoint import read_trajectory, write_trajectory
from spde_lab.utils.replicas import compensated_mean, sample_stderr


def _final_batch(cfg, x0, n):
    keys = [(ESTIMATE_STREAM, r) for r in range(n)]
    last = None
    for step in iterate_batch(cfg, x0, increments_for(cfg, keys)):
        last = step
    return last


class TestSimConfig:
    def test_horizon_must_be_on_grid(self, make_cfg):
        with pytest.raises(InvalidArgumentError):
            make_cfg(dt=0.03, T=0.5)

    def test_steps_for(self):
        assert steps_for(0.5, 0.01) == 50
        assert steps_for(0.0, 0.01) == 0
        with pytest.raises(InvalidArgumentError):
            steps_for(0.015, 0.01)

    def test_at_cutoff_rebuilds_noise(self, sim_cfg):
        finer = sim_cfg.at_cutoff(2)
        assert finer.space.cutoff == 2
        assert finer.noise.space == finer.space
        assert finer.noise.c == sim_cfg.noise.c
        assert sim_cfg.at_cutoff(1) is sim_cfg


class TestOrnsteinUhlenbeck:
    """Additive noise without nonlinearity has closed-form moments"""

    def test_second_moment_matches_discrete_closed_form(self, ou_cfg):
        step = _final_batch(ou_cfg, ou_cfg.space.zeros(), 400)
        values = ou_cfg.space.norm_sq(step.X)
        expected = ou_second_moment(ou_cfg.space, ou_cfg.noise.alpha, ou_cfg.T, dt=ou_cfg.dt)
        assert abs(compensated_mean(values) - expected) <= 4.0 * sample_stderr(values)

    def test_discrete_moment_converges_to_continuous(self, space1):
        continuous = ou_second_moment(space1, 1.3, 0.5)
        discrete = ou_second_moment(space1, 1.3, 0.5, dt=1e-4)
        assert discrete == pytest.approx(continuous, rel=1e-3)

    def test_initial_state_decays(self, space1, shear):
        moment = ou_second_moment(space1, 1.3, 0.0, x0=shear)
        assert moment == pytest.approx(shear.norm() ** 2)


class TestDeterminism:
    """Replica streams and replay"""

    def test_same_replica_is_bitwise_identical(self, sim_cfg, shear):
        a = simulate(shear, sim_cfg, replica=3)
        b = simulate(shear, sim_cfg, replica=3)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.increments, b.increments)

    def test_replicas_are_distinct(self, sim_cfg, shear):
        a = simulate(shear, sim_cfg, replica=0)
        b = simulate(shear, sim_cfg, replica=1)
        assert not np.array_equal(a.increments, b.increments)

    def test_batch_matches_single_replica(self, sim_cfg, shear):
        """Batching replicas never changes a path"""
        keys = [(ESTIMATE_STREAM, r) for r in range(3)]
        inc = increments_for(sim_cfg, keys)
        rows = [step.X.copy() for step in iterate_batch(sim_cfg, shear.coeffs, inc)]
        single = [step.X.copy() for step in iterate_batch(sim_cfg, shear.coeffs, inc[1:2])]
        np.testing.assert_allclose(rows[-1][1], single[-1][0], atol=1e-13)

    def test_replay_reproduces_path(self, sim_cfg, shear):
        traj = simulate(shear, sim_cfg)
        again = replay(traj, sim_cfg)
        np.testing.assert_array_equal(again.states, traj.states)

    def test_replay_rejects_other_grid(self, sim_cfg, shear):
        traj = simulate(shear, sim_cfg)
        with pytest.raises(InvalidArgumentError):
            replay(traj, sim_cfg.with_horizon(0.2))

    def test_paths_stay_divergence_free(self, sim_cfg, rng):
        traj = simulate(random_field(sim_cfg.space, rng, decay=1.0), sim_cfg)
        assert traj.final.is_valid(tol=1e-9)
        assert traj.has_convolution


class TestFirstVariation:
    """eta is the derivative of the discrete flow in x0"""

    @pytest.mark.parametrize("variant", ["multiplier", "integral_kernel"])
    def test_matches_central_difference(self, make_cfg, rng, variant):
        cfg = make_cfg(T=0.2, variant=variant)
        x0 = random_field(cfg.space, rng, decay=1.0, scale=0.5)
        h = random_field(cfg.space, rng, decay=1.0)
        traj = simulate_with_variation(x0, h, cfg)

        eps = 1e-5
        plus = replay(traj, cfg, x0=x0 + h * eps)
        minus = replay(traj, cfg, x0=x0 - h * eps)
        numeric = (plus.states[-1] - minus.states[-1]) / (2.0 * eps)
        exact = traj.variation[-1]
        assert np.linalg.norm(numeric - exact) <= 1e-5 * max(np.linalg.norm(exact), 1e-12)


class TestBlowUp:
    def test_single_path_raises(self, make_cfg, shear):
        with pytest.raises(BlowUpError) as err:
            simulate(shear, make_cfg(guard=1e-3))
        assert err.value.step == 1
        assert err.value.time == pytest.approx(0.01)

    def test_blow_up_writes_partial_checkpoint(self, make_cfg, shear, tmp_path):
        path = tmp_path / "traj.spdt"
        with pytest.raises(BlowUpError):
            simulate(shear, make_cfg(guard=1e-3), checkpoint=path)
        _, meta = read_trajectory(path)
        assert meta["steps_done"] == 0

    def test_batch_censors_only_offending_rows(self, make_cfg, shear):
        cfg = make_cfg(guard=10.0)
        x0 = np.stack([cfg.space.zeros(), cfg.space.zeros(), (shear * 200.0).coeffs])
        step = _final_batch(cfg, x0, 3)
        assert step.alive.tolist() == [True, True, False]
        assert np.all(step.X[2] == 0.0)


class TestDeterministicFlow:
    def test_single_shear_decays_geometrically(self, sim_cfg, shear):
        """b vanishes on one shear mode, so only the implicit damping acts"""
        traj = deterministic_solve(shear, None, 0.3, sim_cfg)
        expected = shear.coeffs * (1.0 + sim_cfg.dt) ** -30
        np.testing.assert_allclose(traj.states[-1], expected, atol=1e-14)

    def test_forcing_samples_checked(self, sim_cfg, shear):
        short = np.zeros((5, sim_cfg.space.n_modes, 3), dtype=complex)
        with pytest.raises(InvalidArgumentError):
            deterministic_solve(shear, short, 0.3, sim_cfg)

    def test_constant_forcing_is_applied(self, sim_cfg):
        forcing = shear_mode(sim_cfg.space, (0, 1, 0), (1.0, 0.0, 0.0), 1.0)
        traj = deterministic_solve(SpectralField.zeros(sim_cfg.space), forcing, 0.1, sim_cfg)
        assert traj.final.norm() > 0.0


class TestCheckpoint:
    def test_resume_continues_bitwise(self, sim_cfg, shear, tmp_path):
        path = tmp_path / "traj.spdt"
        full = simulate(shear, sim_cfg, checkpoint=path)
        write_trajectory(path, full, steps_done=20)
        resumed = simulate(shear, sim_cfg, checkpoint=path, resume=True)
        np.testing.assert_array_equal(resumed.states, full.states)
        np.testing.assert_array_equal(resumed.convolution, full.convolution)

    def test_checkpoint_is_byte_deterministic(self, sim_cfg, shear, tmp_path):
        simulate(shear, sim_cfg, checkpoint=tmp_path / "a.spdt")
        simulate(shear, sim_cfg, checkpoint=tmp_path / "b.spdt")
        assert (tmp_path / "a.spdt").read_bytes() == (tmp_path / "b.spdt").read_bytes()

    def test_resume_rejects_other_config(self, make_cfg, shear, tmp_path):
        path = tmp_path / "traj.spdt"
        simulate(shear, make_cfg(), checkpoint=path)
        with pytest.raises(InvalidArgumentError):
            simulate(shear, make_cfg(seed=8), checkpoint=path, resume=True)
