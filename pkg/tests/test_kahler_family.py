"""Tests for Kähler families, V[J] and the weakly restricted solve."""

import sys
from dataclasses import replace

import numpy as np
import pytest

sys.path.insert(0, "src")

SIGMA_I = [0.0, 1.0]
D_DZ = np.array([0.5, -0.5j])
D_DZ_BAR = np.array([0.5, 0.5j])
D_DT = np.array([0.0, 0.0, 1.0])


# ===================================================================
# Siegel space
# ===================================================================

class TestSiegelPoint:
    def test_rejects_non_symmetric(self):
        from errors import NotInSiegel
        from kahler_family import SiegelPoint
        with pytest.raises(NotInSiegel, match="symmetric"):
            SiegelPoint(np.array([[1j, 0.1], [0.0, 1j]]))

    def test_rejects_non_positive_imaginary_part(self):
        from errors import NotInSiegel
        from kahler_family import SiegelPoint
        with pytest.raises(NotInSiegel, match="positive definite"):
            SiegelPoint(np.array([[0.5 - 1j]]))

    def test_accepts_scalar(self):
        from kahler_family import SiegelPoint
        assert SiegelPoint(1j).m == 1

    def test_structure_matrix(self):
        from kahler_family import siegel_structure_matrix
        Z = np.array([[0.3 + 1.2j]])
        J = siegel_structure_matrix(Z)
        np.testing.assert_allclose(J @ J, -np.eye(2), atol=1e-14)
        # dw o J = i dw with dw = dx + Z dy
        dw = np.array([1.0, Z[0, 0]])
        np.testing.assert_allclose(dw @ J, 1j * dw, atol=1e-14)

    def test_structure_matrix_genus_two(self):
        from kahler_family import siegel_structure_matrix
        Z = np.array([[1.1j, 0.2 + 0.1j], [0.2 + 0.1j, 0.3 + 0.9j]])
        J = siegel_structure_matrix(Z)
        np.testing.assert_allclose(J @ J, -np.eye(4), atol=1e-13)

    def test_variation_matches_difference_quotient(self):
        from kahler_family import siegel_structure_matrix, siegel_structure_variation
        Z = np.array([[0.2 + 1.1j]])
        dZ = np.array([[0.3 - 0.4j]])
        h = 1e-6
        fd = (siegel_structure_matrix(Z + h * dZ) - siegel_structure_matrix(Z - h * dZ)) / (2 * h)
        analytic = siegel_structure_variation(Z, dZ, np.conj(dZ))
        np.testing.assert_allclose(analytic, fd, atol=1e-7)

    def test_coordinates_round_trip(self):
        from kahler_family import siegel_coordinates, siegel_matrix
        Z = np.array([[1.1j, 0.2 + 0.1j], [0.2 + 0.1j, 0.3 + 0.9j]])
        np.testing.assert_allclose(siegel_matrix(siegel_coordinates(Z), 2), Z)

    def test_linear_family_dimension_mismatch(self, domain16):
        from kahler_family import linear_family_j
        with pytest.raises(ValueError, match="torus has m=1"):
            linear_family_j(np.eye(2) * 1j, domain16)


# ===================================================================
# Charts
# ===================================================================

class TestFamilyChart:
    def test_boundary_point(self, linear_chart):
        from errors import BoundaryPoint
        with pytest.raises(BoundaryPoint):
            linear_chart.check_interior([0.0, -0.5])

    def test_wrong_coordinate_count(self, linear_chart):
        with pytest.raises(ValueError, match="expected 2 coordinates"):
            linear_chart.check_interior([0.0, 1.0, 0.0])

    def test_structure_is_cached(self, linear_chart):
        assert linear_chart.structure_at(SIGMA_I) is linear_chart.structure_at(SIGMA_I)

    def test_prime_projects_paired_coordinates(self, linear_chart):
        np.testing.assert_allclose(linear_chart.prime(D_DZ), D_DZ)
        np.testing.assert_allclose(linear_chart.prime(D_DZ_BAR), [0.0, 0.0])

    def test_prime_keeps_unpaired_coordinates(self, perturbed_chart):
        np.testing.assert_allclose(perturbed_chart.prime(D_DT), D_DT)

    def test_analytic_tangent_matches_finite_differences(self, linear_chart):
        fd_chart = replace(linear_chart, tangent=None, _cache={})
        sigma = [0.3, 1.2]
        for direction in (D_DZ, D_DZ_BAR, np.array([1.0, 0.0])):
            analytic = linear_chart.var_j_values(sigma, direction)
            fd = fd_chart.var_j_values(sigma, direction)
            np.testing.assert_allclose(analytic, fd, atol=1e-8)

    def test_perturbed_tangent_matches_finite_differences(self, perturbed_chart):
        fd_chart = replace(perturbed_chart, tangent=None, _cache={})
        sigma = [0.1, 1.0, 0.03]
        for direction in (D_DT, np.array([0.5, -0.5j, 0.0])):
            analytic = perturbed_chart.var_j_values(sigma, direction)
            fd = fd_chart.var_j_values(sigma, direction)
            np.testing.assert_allclose(analytic, fd, atol=1e-7)

    def test_perturbed_chart_flags(self, perturbed_chart, domain16):
        from kahler_family import perturbed_family
        assert not perturbed_chart.holomorphic
        assert not perturbed_chart.translation_invariant
        assert perturbed_family(domain16, []).translation_invariant

    def test_perturbed_structure_is_constant_at_zero(self, perturbed_chart):
        assert perturbed_chart.structure_at([0.0, 1.0, 0.0]).is_constant
        assert not perturbed_chart.structure_at([0.0, 1.0, 0.05]).is_constant

    def test_perturbation_too_large(self, domain16):
        from errors import PerturbationTooLarge
        from kahler_family import perturbed_family
        chart = perturbed_family(domain16, [([1, 0], 5.0)])
        with pytest.raises(PerturbationTooLarge, match="guard"):
            chart.structure_at([0.0, 1.0, 0.09])

    def test_perturbed_family_needs_surface(self):
        from kahler_family import perturbed_family
        from tensor_geometry import GridDomain
        with pytest.raises(ValueError, match="2-tori"):
            perturbed_family(GridDomain(2, 4), [])

    def test_trig_function_is_real(self, domain16):
        from kahler_family import trig_function
        values = trig_function(domain16, [([1, 0], 0.5), ([0, 2], 0.25 - 0.1j)])
        assert np.max(np.abs(values.imag)) == 0.0
        # at y = 0 the second mode contributes 2 Re(0.25 - 0.1i)
        expected = np.cos(2 * np.pi * domain16.x()[:, 0]) + 0.5
        np.testing.assert_allclose(values.real[:, 0], expected, atol=1e-12)


# ===================================================================
# V[J]
# ===================================================================

class TestVarJ:
    @pytest.mark.parametrize("direction", [D_DZ, D_DZ_BAR, np.array([1.0, 0.3])])
    def test_algebraic_identities(self, linear_chart, direction):
        from kahler_family import var_j
        var = var_j(linear_chart, [0.3, 1.2], direction)
        assert var.anticommutation < 1e-12
        assert var.symmetry < 1e-12
        assert var.mixed_part < 1e-12
        assert var.metric_identity < 1e-11

    def test_holomorphic_direction_types(self, linear_chart):
        from kahler_family import var_j
        holo = var_j(linear_chart, SIGMA_I, D_DZ)
        anti = var_j(linear_chart, SIGMA_I, D_DZ_BAR)
        assert holo.v_j_double_prime.norm() < 1e-12
        assert anti.v_j_prime.norm() < 1e-12
        assert holo.v_j.norm() > 0.1

    def test_holomorphic_chart_defect(self, linear_chart):
        from kahler_family import holomorphic_defect
        assert holomorphic_defect(linear_chart, [0.3, 1.2], np.array([1.0, 0.3])) < 1e-12

    def test_perturbed_chart_not_holomorphic_in_t(self, perturbed_chart):
        from kahler_family import holomorphic_defect, var_j
        var = var_j(perturbed_chart, [0.0, 1.0, 0.0], D_DT)
        assert var.anticommutation < 1e-12
        assert holomorphic_defect(perturbed_chart, [0.0, 1.0, 0.0], D_DT) > 1e-4

    def test_inverse_metric_variation(self, linear_chart):
        from kahler_family import inverse_metric_variation_defect
        assert inverse_metric_variation_defect(linear_chart, [0.3, 1.2], D_DZ) < 1e-8

    def test_source_mode(self, linear_chart):
        from kahler_family import var_j
        var = var_j(linear_chart, SIGMA_I, D_DZ)
        with pytest.raises(ValueError, match="unknown mode"):
            var.source("sideways")


# ===================================================================
# Weakly restricted data
# ===================================================================

class TestWeaklyRestricted:
    def test_rigid_direction(self, linear_chart, rigid_structure):
        from kahler_family import var_j, weakly_restricted_solve
        var = var_j(linear_chart, SIGMA_I, D_DZ)
        wr = weakly_restricted_solve(var, rigid_structure)
        assert wr.residual < 1e-12
        assert wr.beta.norm() < 1e-12
        assert wr.g_beta.is_constant()
        assert wr.g_beta.norm() > 0.01

    def test_antiholomorphic_direction_vanishes(self, linear_chart, rigid_structure):
        from kahler_family import var_j, weakly_restricted_solve
        var = var_j(linear_chart, SIGMA_I, D_DZ_BAR)
        wr = weakly_restricted_solve(var, rigid_structure)
        assert wr.g_beta.norm() < 1e-12

    def test_genus_two_siegel_point(self):
        from kahler_family import linear_family, siegel_coordinates, var_j, weakly_restricted_solve
        from tensor_geometry import GridDomain
        chart = linear_family(GridDomain(2, 4))
        Z = np.array([[1.1j, 0.2 + 0.1j], [0.2 + 0.1j, 0.3 + 0.9j]])
        sigma = siegel_coordinates(Z)
        direction = np.zeros(6, dtype=complex)
        direction[2], direction[3] = 0.5, -0.5j      # d/dZ_12
        var = var_j(chart, sigma, direction)
        wr = weakly_restricted_solve(var, chart.structure_at(sigma))
        assert wr.residual < 1e-12
        assert wr.tangency < 1e-12

    def test_planted_potential_at_zero(self, perturbed_chart, domain16):
        """At t = 0 the t-derivative is dbar-exact and phi(V) is minus the planted potential."""
        from hodge_solvers import phi_of
        from kahler_family import SMOOTH_MODE, trig_function, var_j, weakly_restricted_solve
        sigma = [0.0, 1.0, 0.0]
        structure = perturbed_chart.structure_at(sigma)
        var = var_j(perturbed_chart, sigma, D_DT)
        wr = weakly_restricted_solve(var, structure, SMOOTH_MODE)
        assert wr.g_beta.norm() < 1e-10
        assert wr.beta.norm() > 1e-3
        f0 = trig_function(domain16, [([1, 0], 0.02)])
        phi = phi_of(wr, structure).potential
        np.testing.assert_allclose(phi.values, -f0, atol=1e-9)

    def test_curved_structure(self, perturbed_chart):
        from kahler_family import SMOOTH_MODE, var_j, weakly_restricted_solve
        sigma = [0.1, 1.0, 0.03]
        var = var_j(perturbed_chart, sigma, D_DT)
        wr = weakly_restricted_solve(var, perturbed_chart.structure_at(sigma), SMOOTH_MODE)
        assert wr.residual < 1e-8
        assert wr.harmonic_defect < 1e-8


# ===================================================================
# Variation checks
# ===================================================================

class TestVariationChecks:
    def test_rigid_ricci_variation_vanishes(self, linear_chart):
        from kahler_family import var_ricci_check
        assert var_ricci_check(linear_chart, [0.3, 1.2], D_DZ) < 1e-10

    def test_rigid_levi_civita_variation_vanishes(self, linear_chart):
        from kahler_family import var_levi_civita_check
        assert var_levi_civita_check(linear_chart, [0.3, 1.2], D_DZ) < 1e-10

    def test_perturbed_ricci_variation(self, perturbed_chart):
        from kahler_family import var_ricci_check
        assert var_ricci_check(perturbed_chart, [0.0, 1.0, 0.0], D_DT) <= 1e-6

    def test_perturbed_levi_civita_variation(self, perturbed_chart):
        from kahler_family import var_levi_civita_check
        assert var_levi_civita_check(perturbed_chart, [0.0, 1.0, 0.0], D_DT) <= 1e-6
