"""
Tests for checkpoint and field files
"""

import numpy as np
import pytest

from spde_lab.exceptions import InvalidArgumentError
from spde_lab.services.control import build_control
from spde_lab.services.galerkin_sde import simulate
from spde_lab.spectral import SpectralField, random_field
from spde_lab.utils.checkpoint import (
    read_arrays,
    read_control,
    read_field,
    read_trajectory,
    write_arrays,
    write_control,
    write_field,
    write_trajectory,
)


class TestArrayContainer:
    def test_arrays_and_meta_survive(self, tmp_path):
        arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([1 + 2j, 3 - 1j])}
        path = write_arrays(tmp_path / "x.spdt", arrays, {"seed": np.int64(4), "label": "demo"})
        loaded, meta = read_arrays(path)
        np.testing.assert_array_equal(loaded["a"], arrays["a"])
        np.testing.assert_array_equal(loaded["b"], arrays["b"])
        assert meta == {"seed": 4, "label": "demo"}

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.spdt"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(InvalidArgumentError):
            read_arrays(path)


class TestTrajectoryFiles:
    def test_trajectory_round_trip(self, sim_cfg, shear, tmp_path):
        traj = simulate(shear, sim_cfg, replica=2)
        path = write_trajectory(tmp_path / "t.spdt", traj)
        loaded, meta = read_trajectory(path)
        np.testing.assert_array_equal(loaded.states, traj.states)
        np.testing.assert_array_equal(loaded.convolution, traj.convolution)
        assert loaded.key == traj.key
        assert meta["steps_done"] == traj.n_steps

    def test_control_file_is_not_a_trajectory(self, sim_cfg, shear, tmp_path):
        cp = build_control(shear, SpectralField.zeros(sim_cfg.space), 0.2, sim_cfg)
        path = write_control(tmp_path / "c.spdt", cp)
        assert read_control(path).n_star == cp.n_star
        with pytest.raises(InvalidArgumentError):
            read_trajectory(path)


class TestFieldFiles:
    @pytest.mark.parametrize("name", ["x.spdf", "x.json"])
    def test_field_round_trip(self, space1, rng, tmp_path, name):
        field = random_field(space1, rng)
        loaded = read_field(write_field(tmp_path / name, field))
        np.testing.assert_array_equal(loaded.coeffs, field.coeffs)

    def test_binary_layout(self, space1, tmp_path):
        path = write_field(tmp_path / "z.spdf", SpectralField.zeros(space1))
        data = path.read_bytes()
        assert data[:4] == b"SPDF"
        assert len(data) == 16 + space1.n_modes * (3 * 4 + 6 * 8)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            read_field(tmp_path / "absent.spdf")
