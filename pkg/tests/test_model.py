"""Fields, test functions and problem data."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semitrace.model import (
    MagneticField,
    ProblemSpec,
    ScalarField,
    TestFunction,
    TorusDomain,
    VectorPotential,
    sample_field,
    test_function_eval,
)

from conftest import UNIT, generic_field, generic_potential


class TestSampleField:
    @pytest.mark.parametrize("n", [8, 12, 32])
    def test_constant_field(self, n):
        dom = TorusDomain(2, (1.0, 2.0), n)
        vals = sample_field(ScalarField.const(dom.periods, 2.5), dom)
        assert vals.shape == (n, n)
        assert np.all(vals == 2.5)

    def test_single_cosine_mode(self):
        dom = TorusDomain(2, (3.0, 1.0), 8)
        f = ScalarField(dom.periods, (((1, 0), 1.0, 0.0),))
        vals = sample_field(f, dom)
        expected = np.cos(2 * np.pi * np.arange(8) / 8)
        np.testing.assert_allclose(vals, np.broadcast_to(expected[:, None], (8, 8)), atol=1e-15)

    def test_matches_pointwise_evaluation(self, rng):
        V = generic_potential()
        dom = TorusDomain(2, UNIT, 16)
        grid = sample_field(V, dom)
        idx = rng.integers(0, 16, size=(20, 2))
        pts = idx / 16.0
        direct = np.array([V(x) for x in pts])
        np.testing.assert_allclose(grid[idx[:, 0], idx[:, 1]], direct, atol=1e-14, rtol=0)

    def test_random_points_against_explicit_sum(self, rng):
        V = generic_potential()
        x = rng.uniform(0, 1, size=(20, 2))
        s = 3.0
        expected = (
            s
            + 0.5 * s * np.cos(2 * np.pi * x[:, 0])
            + 0.3 * s * np.sin(2 * np.pi * x[:, 1])
            + 0.2 * s * np.cos(2 * np.pi * (x[:, 0] - x[:, 1]))
        )
        np.testing.assert_allclose(V(x), expected, atol=1e-14)


class TestScalarField:
    def test_canonical_merging_of_opposite_wave_vectors(self):
        a = ScalarField(UNIT, (((1, 0), 1.0, 2.0), ((-1, 0), 0.5, 1.0)))
        b = ScalarField(UNIT, (((1, 0), 1.5, 1.0),))
        assert a == b

    def test_exact_derivative_of_single_mode(self):
        f = ScalarField((2.0,), (((3,), 0.0, 1.0),))  # sin(3πx)
        df = f.partial(0)
        x = np.array([[0.1], [0.37]])
        np.testing.assert_allclose(df(x), 3 * np.pi * np.cos(3 * np.pi * x[:, 0]), atol=1e-13)

    def test_laplacian_and_inverse(self):
        V = generic_potential() - 3.0
        np.testing.assert_allclose(V.inverse_laplacian().laplacian().coefficient_distance(V), 0.0, atol=1e-14)

    def test_round_trip_serialization(self):
        V = generic_potential()
        assert ScalarField.from_dict(V.to_dict(), V.periods) == V


class TestMagneticField:
    @given(st.floats(0, 1), st.floats(0, 1))
    @settings(max_examples=30, deadline=None)
    def test_antisymmetry(self, x, y):
        B = generic_field()
        M = B(np.array([x, y]))
        assert np.all(M + M.T == 0)

    def test_zero_flux_on_grid(self):
        B = generic_field()
        dom = TorusDomain(2, UNIT, 32)
        for fld in B.upper.values():
            assert abs(np.mean(sample_field(fld, dom))) <= 1e-14

    def test_potential_reproduces_field(self, field_2d):
        A = VectorPotential.from_field(field_2d)
        dA = A.components[1].partial(0) - A.components[0].partial(1)
        assert dA.coefficient_distance(field_2d.component(0, 1)) <= 1e-14

    def test_potential_reproduces_field_3d(self, field_3d):
        A = VectorPotential.from_field(field_3d)
        for j in range(3):
            for k in range(j + 1, 3):
                dA = A.components[k].partial(j) - A.components[j].partial(k)
                assert dA.coefficient_distance(field_3d.component(j, k)) <= 1e-13
        assert field_3d.closedness_defect() <= 1e-13

    def test_nonzero_flux_rejected(self):
        B = MagneticField.planar(ScalarField(UNIT, (), 1.0))
        assert not B.is_flux_free()
        with pytest.raises(ValueError, match="flux"):
            VectorPotential.from_field(B)

    def test_round_trip_serialization(self, field_2d):
        assert MagneticField.from_dict(field_2d.to_dict(), 2, UNIT).upper == field_2d.upper


class TestTestFunction:
    @pytest.mark.parametrize("k", range(6))
    @pytest.mark.parametrize("t", [-3.0, 0.5, 2.0, 7.0])
    def test_vanishes_outside_support(self, k, t):
        phi = TestFunction((0.5, 2.0))
        assert test_function_eval(phi, t, k) == 0.0

    def test_critical_point_at_center(self):
        phi = TestFunction((-1.0, 3.0))
        assert abs(phi.derivative(1.0, 1)) <= 1e-15

    @pytest.mark.parametrize("w", [0.75, 2.0, 5.0])
    def test_closed_form_values_at_center(self, w):
        phi = TestFunction((1.0 - w, 1.0 + w))
        assert phi(1.0) == pytest.approx(math.exp(-1.0), rel=1e-15)
        assert phi.derivative(1.0, 2) == pytest.approx(-2.0 * math.exp(-1.0) / w**2, rel=1e-13)

    @pytest.mark.parametrize("k", range(1, 6))
    @pytest.mark.parametrize(
        "phi",
        [TestFunction((0.5, 2.0)), TestFunction((-5.0, 5.0)), TestFunction((0.0, 1.0), "poly_bump", (1.0, -2.0, 0.5))],
        ids=["bump-narrow", "bump-wide", "poly-bump"],
    )
    def test_derivatives_match_finite_differences(self, phi, k):
        a, b = phi.support
        w = 0.5 * (b - a)
        t = np.linspace(a + 0.15 * w, b - 0.15 * w, 50)
        step = 1e-4 * w
        # fourth-order central difference of the (k-1)-th derivative
        fd = (
            -phi.derivative(t + 2 * step, k - 1)
            + 8 * phi.derivative(t + step, k - 1)
            - 8 * phi.derivative(t - step, k - 1)
            + phi.derivative(t - 2 * step, k - 1)
        ) / (12 * step)
        exact = phi.derivative(t, k)
        scale = np.max(np.abs(exact))
        assert np.max(np.abs(fd - exact)) <= 1e-6 * scale

    def test_derivative_order_limit(self):
        with pytest.raises(ValueError):
            TestFunction((0.0, 1.0)).derivative(0.5, 6)

    def test_invalid_support(self):
        with pytest.raises(ValueError):
            TestFunction((2.0, 1.0))

    def test_scaling_and_shift(self):
        phi = TestFunction((0.0, 2.0))
        assert phi.scaled(3.0)(0.7) == pytest.approx(3.0 * phi(0.7), rel=1e-15)
        assert phi.shifted(0.5)(0.2) == pytest.approx(phi(0.7), rel=1e-15)

    def test_round_trip_serialization(self):
        phi = TestFunction((0.0, 1.0), "poly_bump", (1.0, 2.0), 0.5)
        assert TestFunction.from_dict(phi.to_dict()) == phi


class TestProblemSpec:
    def test_potential_is_cached_and_consistent(self, small_problem):
        assert small_problem.A is small_problem.A
        assert small_problem.max_wavenumber == 1

    def test_dimension_mismatch(self, field_2d):
        with pytest.raises(ValueError):
            ProblemSpec(TorusDomain(3, (1.0, 1.0, 1.0)), field_2d, ScalarField.zero(UNIT), TestFunction((0.0, 1.0)))
