"""
Tests for the truncated convective nonlinearity
"""

import numpy as np
import pytest

from spde_lab.exceptions import InvalidArgumentError
from spde_lab.spectral import (
    bilinear,
    bilinear_direct,
    build_space,
    cutoff_bilinear,
    project,
    random_field,
    shear_mode,
    smooth_cutoff,
    symmetric_divergence_direct,
    workspace_for,
)


def _relative_gap(a, b):
    scale = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


class TestOracleAgreement:
    """The triad sum matches the explicit double sum"""

    @pytest.mark.parametrize("cutoff, pairs", [(1, 40), (2, 5)])
    def test_matches_direct_sum(self, cutoff, pairs, rng):
        ws = workspace_for(build_space(cutoff))
        for _ in range(pairs):
            x = random_field(ws.space, rng)
            y = random_field(ws.space, rng)
            fast = bilinear(x, y, ws)
            slow = project(bilinear_direct(x, y), ws.space)
            assert _relative_gap(fast.coeffs, slow.coeffs) < 1e-12

    def test_batched_apply_matches_single(self, space1, rng):
        ws = workspace_for(space1)
        xs = np.stack([random_field(space1, rng).coeffs for _ in range(3)])
        ys = np.stack([random_field(space1, rng).coeffs for _ in range(3)])
        batched = ws.apply(xs, ys)
        for i in range(3):
            np.testing.assert_allclose(batched[i], ws.apply(xs[i], ys[i]), atol=1e-13)


class TestStructure:
    """Algebraic identities of b"""

    @pytest.mark.parametrize("cutoff", [1, 2])
    def test_energy_orthogonality(self, cutoff, rng):
        """(b_m(x, y), y) vanishes for y in the Galerkin space"""
        space = build_space(cutoff)
        ws = workspace_for(space)
        for _ in range(100 if cutoff == 1 else 20):
            x = random_field(space, rng)
            y = random_field(space, rng)
            value = bilinear(x, y, ws).inner(y)
            bound = 1e-10 * (1.0 + x.norm(1.0)) * (1.0 + y.norm(1.0)) * (1.0 + y.norm())
            assert abs(value) <= bound

    def test_result_is_divergence_free_and_real(self, space2, rng):
        ws = workspace_for(space2)
        out = bilinear(random_field(space2, rng), random_field(space2, rng), ws)
        assert out.is_valid(tol=1e-10)

    def test_symmetric_divergence_identity(self, space1, rng):
        """b(x, y) + b(y, x) = -P div(x (x) y + y (x) x) for divergence-free x, y"""
        x = random_field(space1, rng)
        y = random_field(space1, rng)
        lhs = bilinear_direct(x, y) + bilinear_direct(y, x)
        rhs = symmetric_divergence_direct(x, y)
        assert _relative_gap(lhs.coeffs, rhs.coeffs) < 1e-12

    def test_single_shear_is_steady(self, space1):
        """A single shear mode has no self-interaction"""
        ws = workspace_for(space1)
        x = shear_mode(space1, (1, 0, 0), (0.0, 1.0, 0.0), 1.0)
        assert bilinear(x, x, ws).norm() == pytest.approx(0.0, abs=1e-14)

    def test_space_mismatch(self, space1, space2, rng):
        with pytest.raises(InvalidArgumentError):
            bilinear(random_field(space2, rng), random_field(space2, rng), workspace_for(space1))


class TestCutoff:
    """Smooth cutoff and the cut-off nonlinearity"""

    def test_smooth_cutoff_values(self):
        values = smooth_cutoff(np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0]))
        np.testing.assert_allclose(values, [1.0, 1.0, 1.0, 0.5, 0.0, 0.0], atol=1e-15)

    def test_smooth_cutoff_is_monotone(self):
        values = smooth_cutoff(np.linspace(0.0, 3.0, 301))
        assert np.all(np.diff(values) <= 0.0)

    def test_inactive_below_radius(self, space1, rng):
        ws = workspace_for(space1)
        x = random_field(space1, rng)
        R = 2.0 * x.norm(1.0)
        np.testing.assert_allclose(cutoff_bilinear(x, R, ws).coeffs, bilinear(x, x, ws).coeffs)

    def test_vanishes_beyond_twice_radius(self, space1, rng):
        ws = workspace_for(space1)
        x = random_field(space1, rng)
        R = 0.4 * x.norm(1.0)
        assert cutoff_bilinear(x, R, ws).norm() == 0.0

    def test_radius_must_be_positive(self, space1, rng):
        with pytest.raises(InvalidArgumentError):
            cutoff_bilinear(random_field(space1, rng), 0.0, workspace_for(space1))
