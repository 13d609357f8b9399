"""
Tests for the Stokes eigenbasis and spectral fields
"""

import numpy as np
import pytest

from spde_lab.exceptions import InvalidArgumentError, InvariantViolationError
from spde_lab.spectral import (
    SpectralField,
    basis_field,
    build_space,
    fractional_power,
    project,
    random_field,
    shear_mode,
    sobolev_norm,
)


class TestGalerkinSpace:
    """Mode tables and eigenvalues"""

    def test_cutoff_one_sizes(self, space1):
        """26 nonzero modes in the unit cube, four real directions per conjugate pair"""
        assert space1.n_modes == 26
        assert space1.dim == 52
        assert (0, 0, 0) not in space1.mode_list

    def test_eigenvalues_are_squared_lengths(self, space2):
        for k, mu in zip(space2.mode_list, space2.eigenvalues):
            assert mu == k[0] ** 2 + k[1] ** 2 + k[2] ** 2
        assert np.min(space2.eigenvalues) == 1.0

    def test_empty_space_rejected(self):
        with pytest.raises(InvalidArgumentError):
            build_space(0)

    def test_space_is_cached(self):
        assert build_space(2) is build_space(2)

    def test_tables_are_read_only(self, space1):
        with pytest.raises(ValueError):
            space1.eigenvalues[0] = 5.0

    def test_unknown_wavevector(self, space1):
        with pytest.raises(InvalidArgumentError):
            space1.index_of((2, 0, 0))


class TestRealBasis:
    """Real orthonormal coordinates"""

    def test_parseval(self, space2, rng):
        """The real basis is orthonormal in H"""
        real = rng.standard_normal(space2.dim)
        x = SpectralField.from_real(space2, real)
        assert x.norm() ** 2 == pytest.approx(np.sum(real ** 2), rel=1e-12)
        np.testing.assert_allclose(x.to_real(), real, atol=1e-12)

    def test_basis_fields_are_eigenvectors(self, space1):
        for index in (0, 17, space1.dim - 1):
            e = basis_field(space1, index)
            assert e.norm() == pytest.approx(1.0)
            assert e.norm(1.0) == pytest.approx(space1.real_eigenvalues[index])
            assert e.is_valid()

    def test_random_field_is_divergence_free_and_real(self, space2, rng):
        x = random_field(space2, rng, decay=1.0)
        assert x.is_valid(tol=1e-12)


class TestOperators:
    """Fractional powers, norms and the interpolation inequality"""

    def test_fractional_power_composes(self, space2, rng):
        x = random_field(space2, rng)
        composed = fractional_power(fractional_power(x, 0.3), 0.45)
        np.testing.assert_allclose(composed.coeffs, fractional_power(x, 0.75).coeffs, rtol=1e-12)

    def test_negative_power_inverts(self, space1, rng):
        x = random_field(space1, rng)
        back = fractional_power(fractional_power(x, -1.3), 1.3)
        np.testing.assert_allclose(back.coeffs, x.coeffs, atol=1e-12)

    def test_norm_monotone_in_gamma(self, space2, rng):
        """Eigenvalues are at least 1, so Sobolev norms increase with gamma"""
        x = random_field(space2, rng)
        assert sobolev_norm(x, 0.0) <= sobolev_norm(x, 0.5) <= sobolev_norm(x, 1.0)

    @pytest.mark.parametrize("alpha, beta, gamma", [(0.0, 0.5, 1.0), (0.0, 0.25, 1.0), (0.5, 0.8, 1.5)])
    def test_interpolation_inequality(self, space2, rng, alpha, beta, gamma):
        """|A^beta x| <= |A^alpha x|^(1-theta) |A^gamma x|^theta with constant 1"""
        theta = (beta - alpha) / (gamma - alpha)
        for _ in range(100):
            x = random_field(space2, rng, decay=rng.uniform(-0.5, 1.5))
            lhs = x.norm(beta)
            rhs = x.norm(alpha) ** (1.0 - theta) * x.norm(gamma) ** theta
            assert lhs <= rhs * (1.0 + 1e-12)


class TestProjection:
    """Galerkin projector between levels"""

    def test_projection_is_idempotent(self, space2, space1, rng):
        x = random_field(space2, rng)
        once = project(x, space1)
        twice = project(once, space1)
        np.testing.assert_array_equal(once.coeffs, twice.coeffs)

    def test_embedding_keeps_low_modes(self, space1, space2, rng):
        x = random_field(space1, rng)
        up = project(x, space2)
        np.testing.assert_array_equal(project(up, space1).coeffs, x.coeffs)
        assert up.norm() == pytest.approx(x.norm())

    def test_projection_drops_high_modes(self, space2, space1):
        x = shear_mode(space2, (2, 0, 0), (0.0, 0.0, 1.0), 1.0)
        assert project(x, space1).norm() == 0.0


class TestFields:
    """SpectralField construction and invariants"""

    def test_shear_mode_norm(self, space1):
        """amplitude cos(k.xi) has mean square amplitude^2 / 2"""
        x = shear_mode(space1, (1, 0, 0), (0.0, 1.0, 0.0), 2.0)
        assert x.norm() ** 2 == pytest.approx(2.0)
        assert x.support() == [(-1, 0, 0), (1, 0, 0)]

    def test_non_orthogonal_direction_rejected(self, space1):
        with pytest.raises(InvalidArgumentError):
            shear_mode(space1, (1, 0, 0), (1.0, 0.0, 0.0))

    def test_assert_valid_catches_non_real_field(self, space1):
        coeffs = space1.zeros()
        coeffs[space1.index_of((1, 0, 0))] = [0.0, 1.0, 0.0]
        with pytest.raises(InvariantViolationError):
            space1.assert_valid(coeffs)

    def test_shape_mismatch(self, space1, space2):
        with pytest.raises(InvalidArgumentError):
            SpectralField(space1, space2.zeros())

    def test_grid_round_trip_and_parseval(self, space1, rng):
        x = random_field(space1, rng)
        grid = space1.to_grid(x.coeffs)
        assert np.mean(np.sum(grid ** 2, axis=0)) == pytest.approx(x.norm() ** 2, rel=1e-12)
        np.testing.assert_allclose(space1.from_grid(grid), x.coeffs, atol=1e-12)

    def test_coarse_grid_rejected(self, space2):
        with pytest.raises(InvalidArgumentError):
            space2.to_grid(space2.zeros(), n_grid=4)
