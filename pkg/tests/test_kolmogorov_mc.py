"""
Tests for the Kolmogorov semigroup estimators
"""

import math

import numpy as np
import pytest

from spde_lab.config import settings
from spde_lab.exceptions import InvalidArgumentError, ResourceLimitError
from spde_lab.services.galerkin_sde import ou_second_moment, steps_for
from spde_lab.services.kolmogorov_mc import (
    check_variation_of_constants,
    crn_finite_difference,
    estimate_bel_gradient,
    estimate_feynman_kac,
    estimate_markov_factorization,
    estimate_semigroup,
    feynman_kac_sweep,
    summarize,
)
from spde_lab.services.observables import build_observable
from spde_lab.spectral import project, shear_mode


@pytest.fixture
def norm_sq(space1):
    return build_observable("norm-sq", space1)


@pytest.fixture
def unit_shear(space1):
    """Unit vector of H along the shear mode"""
    return shear_mode(space1, (1, 0, 0), (0.0, 1.0, 0.0), math.sqrt(2.0))


class TestSemigroup:
    def test_time_zero_is_exact(self, sim_cfg, shear, norm_sq):
        found = estimate_semigroup(norm_sq, 0.0, shear, sim_cfg, 10)
        assert found.value == pytest.approx(norm_sq(shear), rel=1e-14)
        assert found.stderr == 0.0

    def test_ou_moment(self, ou_cfg, shear, norm_sq):
        found = estimate_semigroup(norm_sq, 0.5, shear, ou_cfg, 400)
        expected = ou_second_moment(ou_cfg.space, 1.3, 0.5, x0=shear, dt=ou_cfg.dt)
        assert abs(found.value - expected) <= 4.0 * found.stderr
        assert found.valid and found.censored == 0

    def test_input_is_projected(self, sim_cfg, space2, shear, norm_sq):
        """u_m(t, x) = u_m(t, P_m x)"""
        lifted = project(shear, space2) + shear_mode(space2, (2, 0, 0), (0.0, 0.0, 1.0), 0.3)
        a = estimate_semigroup(norm_sq, 0.2, lifted, sim_cfg, 8)
        b = estimate_semigroup(norm_sq, 0.2, shear, sim_cfg, 8)
        assert a.value == b.value

    def test_argument_checks(self, sim_cfg, shear, norm_sq):
        with pytest.raises(InvalidArgumentError):
            estimate_semigroup(norm_sq, 0.2, shear, sim_cfg, 1)
        with pytest.raises(InvalidArgumentError):
            estimate_semigroup(norm_sq, 2.0, shear, sim_cfg, 10)
        with pytest.raises(InvalidArgumentError):
            estimate_feynman_kac(norm_sq, -1.0, 0.2, shear, sim_cfg, 10)


class TestFeynmanKac:
    def test_zero_damping_is_semigroup(self, sim_cfg, shear, norm_sq):
        u = estimate_semigroup(norm_sq, 0.3, shear, sim_cfg, 20)
        v = estimate_feynman_kac(norm_sq, 0.0, 0.3, shear, sim_cfg, 20)
        assert v.value == u.value

    def test_damping_is_monotone(self, sim_cfg, shear, norm_sq):
        values = [e.value for e in feynman_kac_sweep(norm_sq, [0.0, 1.0, 10.0, 100.0], 0.3, shear, sim_cfg, 20)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestGradient:
    """Bismut-Elworthy-Li against closed forms and finite differences"""

    def test_bel_matches_ou_derivative(self, ou_cfg, shear, unit_shear, norm_sq):
        t = 0.2
        n = steps_for(t, ou_cfg.dt)
        exact = 2.0 * (1.0 + ou_cfg.dt) ** (-2 * n) * shear.inner(unit_shear)
        found = estimate_bel_gradient(norm_sq, 0.0, t, shear, unit_shear, ou_cfg, 400)
        assert abs(found.value - exact) <= 4.0 * found.stderr

    def test_crn_matches_ou_derivative(self, ou_cfg, shear, unit_shear, norm_sq):
        t, eps = 0.2, 1e-3
        decay = (1.0 + ou_cfg.dt) ** (-steps_for(t, ou_cfg.dt))
        exact = 2.0 * decay ** 2 * shear.inner(unit_shear) + eps * decay ** 2
        found = crn_finite_difference(norm_sq, 0.0, t, shear, unit_shear, ou_cfg, 200, epsilon=eps)
        assert abs(found.value - exact) <= 4.0 * found.stderr + 1e-10

    def test_bel_agrees_with_crn_under_damping(self, sim_cfg, shear, unit_shear):
        phi = build_observable("tanh-energy", sim_cfg.space)
        bel = estimate_bel_gradient(phi, 1.0, 0.2, shear, unit_shear, sim_cfg, 400)
        fd = crn_finite_difference(phi, 1.0, 0.2, shear, unit_shear, sim_cfg, 400)
        assert abs(bel.value - fd.value) <= 4.0 * math.hypot(bel.stderr, fd.stderr)
        assert bel.extra["stochastic_term"] + bel.extra["damping_term"] == pytest.approx(bel.value)

    def test_gradient_needs_positive_time(self, sim_cfg, shear, unit_shear, norm_sq):
        with pytest.raises(InvalidArgumentError):
            estimate_bel_gradient(norm_sq, 1.0, 0.0, shear, unit_shear, sim_cfg, 10)

    def test_fd_epsilon_must_be_positive(self, sim_cfg, shear, unit_shear, norm_sq):
        with pytest.raises(InvalidArgumentError):
            crn_finite_difference(norm_sq, 1.0, 0.2, shear, unit_shear, sim_cfg, 10, epsilon=0.0)


class TestVariationOfConstants:
    def test_zero_damping_has_zero_residual(self, sim_cfg, shear, norm_sq):
        found = check_variation_of_constants(norm_sq, 0.0, 0.2, shear, sim_cfg, 20, 4)
        assert found.residual == 0.0
        assert found.within
        assert found.nodes == []

    def test_damped_identity_holds(self, sim_cfg, shear, norm_sq):
        found = check_variation_of_constants(norm_sq, 0.5, 0.1, shear, sim_cfg, 40, 10, quadrature_nodes=2)
        assert len(found.nodes) == 2
        assert all(0.0 <= s <= 0.1 for s in found.nodes)
        assert abs(found.residual) <= 5.0 * found.stderr + 0.02 * abs(found.lhs.value)

    def test_nested_budget(self, sim_cfg, shear, norm_sq, monkeypatch):
        monkeypatch.setattr(settings, "max_nested_paths", 100)
        with pytest.raises(ResourceLimitError):
            check_variation_of_constants(norm_sq, 1.0, 0.2, shear, sim_cfg, 50, 50)


class TestMarkovFactorization:
    def test_chapman_kolmogorov(self, sim_cfg, shear, norm_sq):
        const = build_observable("const", sim_cfg.space)
        found = estimate_markov_factorization(const, const, norm_sq, 0.1, 0.1, shear, sim_cfg, 60, 20)
        assert abs(found.difference) <= 4.0 * found.stderr
        assert found.to_dict()["t1"] == 0.1

    def test_cylindrical_factors(self, sim_cfg, shear):
        f0 = build_observable("bump:1", sim_cfg.space)
        f1 = build_observable("cos:0", sim_cfg.space)
        f2 = build_observable("ratio:2", sim_cfg.space)
        found = estimate_markov_factorization(f0, f1, f2, 0.1, 0.1, shear, sim_cfg, 60, 20)
        assert abs(found.difference) <= 4.0 * found.stderr + 1e-12


class TestSummarize:
    def test_censored_replicas_are_dropped(self):
        found = summarize(np.array([1.0, 2.0, 3.0, 100.0]), np.array([True, True, True, False]), 7, "demo")
        assert found.value == pytest.approx(2.0)
        assert found.samples == 3
        assert found.censored == 1
        assert not found.valid
