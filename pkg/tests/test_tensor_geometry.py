"""Tests for grid tensor calculus."""

import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

sys.path.insert(0, "src")


def _wave(domain, freq):
    coords = domain.coordinates
    return np.exp(2j * np.pi * np.tensordot(np.asarray(freq, dtype=float), coords, axes=(0, 0)))


# ===================================================================
# GridDomain / TensorField
# ===================================================================

class TestGridDomain:
    def test_rejects_non_power_of_two(self):
        from tensor_geometry import GridDomain
        with pytest.raises(ValueError, match="power of two"):
            GridDomain(1, 24)

    def test_rejects_zero_dimension(self):
        from tensor_geometry import GridDomain
        with pytest.raises(ValueError, match="m must be"):
            GridDomain(0, 16)

    def test_coordinates_shape_and_range(self):
        from tensor_geometry import GridDomain
        domain = GridDomain(2, 8)
        assert domain.dim == 4
        assert domain.coordinates.shape == (4, 8, 8, 8, 8)
        assert domain.coordinates.min() == 0.0
        assert domain.coordinates.max() == pytest.approx(7 / 8)

    def test_check_same_raises_grid_mismatch(self):
        from errors import GridMismatch
        from tensor_geometry import GridDomain
        with pytest.raises(GridMismatch):
            GridDomain(1, 8).check_same(GridDomain(1, 16))


class TestTensorField:
    def test_shape_validated(self, domain16):
        from tensor_geometry import UP, TensorField
        with pytest.raises(ValueError, match="values shape"):
            TensorField(domain16, (UP,), np.zeros((2, 8, 8)))

    def test_add_rejects_different_signature(self, domain16):
        from errors import SlotMismatch
        from tensor_geometry import DOWN, UP, TensorField
        a = TensorField.zeros(domain16, (UP,))
        b = TensorField.zeros(domain16, (DOWN,))
        with pytest.raises(SlotMismatch):
            a + b

    def test_constant_and_mean(self, domain16):
        from tensor_geometry import DOWN, UP, TensorField
        field_ = TensorField.constant(domain16, (UP, DOWN), [[1, 2], [3, 4]])
        assert field_.is_constant()
        np.testing.assert_allclose(field_.mean(), [[1, 2], [3, 4]])

    def test_scalar_multiplication_by_function(self, domain16):
        from tensor_geometry import UP, TensorField
        f = TensorField.scalar(domain16, domain16.x())
        v = TensorField.constant(domain16, (UP,), [1.0, 2.0])
        product = v * f
        np.testing.assert_allclose(product.values[1], 2.0 * domain16.x())


# ===================================================================
# Contraction and type projection
# ===================================================================

class TestContract:
    def test_omega_times_inverse_is_identity(self, domain16):
        from tensor_geometry import contract, standard_symplectic
        symp = standard_symplectic(domain16)
        identity = contract(symp.omega, symp.omega_inv, [(1, 0)])
        np.testing.assert_allclose(identity.mean(), np.eye(2), atol=1e-14)
        assert identity.signature == ("down", "up")

    def test_same_variance_rejected(self, domain16):
        from errors import SlotMismatch
        from tensor_geometry import DOWN, TensorField, contract
        a = TensorField.zeros(domain16, (DOWN,))
        with pytest.raises(SlotMismatch, match="both"):
            contract(a, a, [(0, 0)])

    def test_slot_paired_twice_rejected(self, domain16):
        from errors import SlotMismatch
        from tensor_geometry import DOWN, UP, TensorField, contract
        a = TensorField.zeros(domain16, (UP, DOWN))
        b = TensorField.zeros(domain16, (DOWN, UP))
        with pytest.raises(SlotMismatch, match="twice"):
            contract(a, b, [(0, 0), (0, 1)])

    @settings(max_examples=20, deadline=None)
    @given(
        a=st.floats(-5, 5, allow_nan=False),
        b=st.floats(-5, 5, allow_nan=False),
    )
    def test_linear_in_first_argument(self, a, b):
        from tensor_geometry import DOWN, UP, GridDomain, TensorField, contract
        domain = GridDomain(1, 4)
        rng = np.random.default_rng(0)
        x = TensorField(domain, (UP,), rng.standard_normal((2, 4, 4)) + 0j)
        y = TensorField(domain, (UP,), rng.standard_normal((2, 4, 4)) + 0j)
        w = TensorField(domain, (DOWN, DOWN), rng.standard_normal((2, 2, 4, 4)) + 0j)
        lhs = contract(x * a + y * b, w, [(0, 0)])
        rhs = contract(x, w, [(0, 0)]) * a + contract(y, w, [(0, 0)]) * b
        np.testing.assert_allclose(lhs.values, rhs.values, atol=1e-12)


class TestTypeProject:
    def test_parts_sum_to_whole(self, rigid_structure, domain32):
        from tensor_geometry import ANTIHOLOMORPHIC, HOLOMORPHIC, UP, TensorField, type_project
        v = TensorField.constant(domain32, (UP,), [1.0, -0.5])
        hol = type_project(v, rigid_structure, (HOLOMORPHIC,))
        anti = type_project(v, rigid_structure, (ANTIHOLOMORPHIC,))
        np.testing.assert_allclose((hol + anti).values, v.values, atol=1e-14)
        assert hol.types == (HOLOMORPHIC,)

    def test_projectors_are_complementary(self, rigid_structure, domain32):
        from tensor_geometry import ANTIHOLOMORPHIC, HOLOMORPHIC, UP, TensorField, type_project
        v = TensorField.constant(domain32, (UP,), [0.3, 2.0])
        twice = type_project(type_project(v, rigid_structure, (HOLOMORPHIC,)), rigid_structure,
                             (ANTIHOLOMORPHIC,))
        assert twice.norm() < 1e-14

    def test_holomorphic_vectors_are_i_eigenvectors(self, tilted_structure, domain32):
        from tensor_geometry import HOLOMORPHIC, UP, TensorField, contract, type_project
        v = type_project(TensorField.constant(domain32, (UP,), [1.0, 0.0]), tilted_structure,
                         (HOLOMORPHIC,))
        jv = contract(tilted_structure.J, v, [(1, 0)])
        np.testing.assert_allclose(jv.values, 1j * v.values, atol=1e-13)

    def test_wrong_target_count(self, rigid_structure, domain32):
        from tensor_geometry import UP, TensorField, type_project
        with pytest.raises(ValueError, match="targets"):
            type_project(TensorField.zeros(domain32, (UP,)), rigid_structure, (None, None))


# ===================================================================
# Structures, metrics and curvature
# ===================================================================

class TestComplexStructure:
    def test_siegel_point_metric_at_i(self, rigid_structure):
        np.testing.assert_allclose(rigid_structure.metric.mean(), 2 * np.pi * np.eye(2), atol=1e-12)
        assert rigid_structure.defects.j_squared < 1e-14

    def test_inverse_metric_is_inverse(self, tilted_structure):
        from tensor_geometry import contract
        product = contract(tilted_structure.metric, tilted_structure.inverse_metric, [(1, 0)])
        np.testing.assert_allclose(product.mean(), np.eye(2), atol=1e-12)

    def test_rejects_non_structure(self, domain16):
        from tensor_geometry import DOWN, UP, ComplexStructureField, TensorField, standard_symplectic
        J = TensorField.constant(domain16, (UP, DOWN), np.eye(2))
        with pytest.raises(ValueError, match="almost complex"):
            ComplexStructureField.from_field(J, standard_symplectic(domain16))

    def test_rejects_wrong_orientation(self, domain16):
        from errors import DegenerateMetric
        from tensor_geometry import DOWN, UP, ComplexStructureField, TensorField, standard_symplectic
        J = TensorField.constant(domain16, (UP, DOWN), [[0.0, 1.0], [-1.0, 0.0]])
        with pytest.raises(DegenerateMetric):
            ComplexStructureField.from_field(J, standard_symplectic(domain16))


class TestLeviCivita:
    def test_constant_metric_is_flat(self, tilted_structure):
        lc = tilted_structure.levi_civita
        assert np.max(np.abs(lc.christoffel)) < 1e-12
        assert lc.riemann.norm() < 1e-10
        assert lc.metric_residual() < 1e-10

    def test_conformal_metric_is_parallel(self, domain32):
        from tensor_geometry import DOWN, TensorField, levi_civita
        factor = np.exp(0.2 * np.cos(2 * np.pi * domain32.x()) * np.sin(2 * np.pi * domain32.y()))
        g = TensorField(domain32, (DOWN, DOWN),
                        np.einsum("ab,...->ab...", np.eye(2), factor).astype(complex))
        lc = levi_civita(g)
        assert lc.metric_residual() < 1e-9

    def test_degenerate_metric_rejected(self, domain16):
        from errors import DegenerateMetric
        from tensor_geometry import DOWN, TensorField, levi_civita
        g = TensorField.constant(domain16, (DOWN, DOWN), [[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(DegenerateMetric):
            levi_civita(g)

    def test_divergence_requires_up_slot(self, tilted_structure, domain32):
        from errors import SlotMismatch
        from tensor_geometry import DOWN, TensorField
        with pytest.raises(SlotMismatch):
            tilted_structure.levi_civita.divergence(TensorField.zeros(domain32, (DOWN,)))


class TestExteriorCalculus:
    def test_d_squared_vanishes(self, domain32):
        from tensor_geometry import TensorField, exterior_derivative
        f = TensorField.scalar(domain32, np.sin(2 * np.pi * domain32.x())
                               * np.cos(4 * np.pi * domain32.y()))
        assert exterior_derivative(exterior_derivative(f)).norm() < 1e-10

    def test_gradient_of_plane_wave(self, domain32):
        from tensor_geometry import TensorField, exterior_derivative
        wave = _wave(domain32, [1, 2])
        df = exterior_derivative(TensorField.scalar(domain32, wave))
        np.testing.assert_allclose(df.values[0], 2j * np.pi * wave, atol=1e-10)
        np.testing.assert_allclose(df.values[1], 4j * np.pi * wave, atol=1e-10)

    def test_two_forms_rejected(self, domain16):
        from errors import SlotMismatch
        from tensor_geometry import DOWN, TensorField, exterior_derivative
        with pytest.raises(SlotMismatch):
            exterior_derivative(TensorField.zeros(domain16, (DOWN, DOWN)))

    def test_nijenhuis_of_constant_structure(self, tilted_structure):
        from tensor_geometry import nijenhuis
        assert nijenhuis(tilted_structure).norm() < 1e-12

    def test_nijenhuis_detects_non_integrable_structure(self):
        """J = A J0 A^{-1} with a symplectic shear A coupling z1 to z2 along x2."""
        from tensor_geometry import (
            DOWN, UP, ComplexStructureField, GridDomain, TensorField, nijenhuis,
            standard_symplectic,
        )
        domain = GridDomain(2, 8)
        eye, zero = np.eye(2), np.zeros((2, 2))
        j0 = np.block([[zero, -eye], [eye, zero]])
        bump = 0.1 * np.cos(2 * np.pi * domain.coordinates[1])
        shear = np.zeros((4, 4) + domain.shape)
        shear[0, 3] = shear[1, 2] = bump
        a = np.eye(4).reshape((4, 4) + (1,) * 4) + shear
        a_inv = np.eye(4).reshape((4, 4) + (1,) * 4) - shear
        values = np.einsum("ab...,bc,cd...->ad...", a, j0, a_inv)
        structure = ComplexStructureField.from_field(
            TensorField(domain, (UP, DOWN), values), standard_symplectic(domain), tolerance=1e-9
        )
        assert nijenhuis(structure).norm() > 1e-2

    def test_directional_derivative(self, domain32):
        from tensor_geometry import TensorField, directional_derivative
        wave = _wave(domain32, [1, 0])
        out = directional_derivative(TensorField.scalar(domain32, wave), np.array([1.0, 0.0]))
        np.testing.assert_allclose(out.values, 2j * np.pi * wave, atol=1e-10)
