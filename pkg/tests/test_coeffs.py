"""Closed-form coefficients of the trace expansion."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad

from semitrace.coeffs import (
    coefficient_field,
    f0_pointwise,
    f1_pointwise,
    f2_pointwise,
    radial_xi_integral,
    trace_coefficient,
    xi_integral,
)
from semitrace.model import MagneticField, ScalarField, TestFunction, TorusDomain

from conftest import UNIT

PHI = TestFunction((-200.0, 11.0))
SMALL = TestFunction((0.5, 4.0))


def quad_1d(f, a, b):
    return quad(f, a, b, epsabs=1e-14, epsrel=1e-13, limit=400)[0]


class TestRadialIntegral:
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_matches_adaptive_quadrature(self, d):
        phi = SMALL
        got = radial_xi_integral(phi, d, phi.support)
        sphere = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
        ref = sphere * quad_1d(lambda r: phi(r * r) * r ** (d - 1), math.sqrt(0.5), 2.0)
        assert got == pytest.approx(ref, rel=1e-10)

    def test_two_dimensional_tensor_quadrature(self):
        # independent check: Gauss–Legendre tensor rule on the square [-2, 2]²
        g, w = np.polynomial.legendre.leggauss(400)
        x, wx = 2.0 * g, 2.0 * w
        X, Y = np.meshgrid(x, x, indexing="ij")
        ref = float(np.sum(np.outer(wx, wx) * SMALL(X**2 + Y**2)))
        assert radial_xi_integral(SMALL, 2, SMALL.support) == pytest.approx(ref, rel=1e-8)

    def test_two_dimensional_identity(self):
        # ∫_{ℝ²} g(|ξ|²) dξ = π ∫_0^∞ g(t) dt
        ref = math.pi * quad_1d(SMALL, 0.5, 4.0)
        assert radial_xi_integral(SMALL, 2, SMALL.support) == pytest.approx(ref, rel=1e-12)

    def test_support_below_origin(self):
        assert radial_xi_integral(SMALL, 2, (-3.0, -1.0)) == 0.0

    def test_unbounded_support_rejected(self):
        with pytest.raises(ValueError):
            radial_xi_integral(lambda t: np.exp(-t), 2, (0.0, math.inf))


class TestLeadingCoefficient:
    @pytest.mark.parametrize("v", [-3.0, 0.0, 1.2, 3.9])
    def test_two_dimensional_closed_form(self, v):
        # f₀ = (1/4π) ∫_v^∞ φ(s) ds in two dimensions
        ref = quad_1d(SMALL, max(v, 0.5), 4.0) / (4 * math.pi) if v < 4.0 else 0.0
        got = f0_pointwise(ScalarField.const(UNIT, v), [0.1, 0.2], SMALL)
        assert got == pytest.approx(ref, rel=1e-11, abs=1e-15)

    def test_three_dimensional(self):
        v = 0.7
        ref = 4 * math.pi * quad_1d(lambda r: SMALL(r * r + v) * r * r, 0.0, 2.0) / (2 * math.pi) ** 3
        got = f0_pointwise(ScalarField.const((1.0, 1.0, 1.0), v), [0.0, 0.0, 0.0], SMALL)
        assert got == pytest.approx(ref, rel=1e-10)

    def test_support_below_potential(self, potential_2d):
        x = np.random.default_rng(0).uniform(0, 1, (20, 2))
        assert np.all(f0_pointwise(potential_2d, x, TestFunction((-10.0, -5.0))) == 0.0)

    def test_decreasing_in_potential_for_positive_phi(self):
        v = np.linspace(-1.0, 4.5, 30)
        vals = xi_integral(SMALL, 0, v, 2)
        assert np.all(np.diff(vals) <= 1e-15)

    def test_independent_of_magnetic_field(self, field_2d, potential_2d):
        dom = TorusDomain(2, UNIT, 64)
        a = trace_coefficient(0, field_2d, potential_2d, PHI, dom)
        b = trace_coefficient(0, MagneticField.zero(2, UNIT), potential_2d, PHI, dom)
        assert a == b

    def test_free_value(self):
        dom = TorusDomain(2, (2 * math.pi,) * 2, 8)
        got = trace_coefficient(0, MagneticField.zero(2, dom.periods), ScalarField.zero(dom.periods), SMALL, dom)
        assert got == pytest.approx(dom.volume * quad_1d(SMALL, 0.5, 4.0) / (4 * math.pi), rel=1e-12)


class TestFirstCoefficient:
    def test_vanishes(self, field_2d, potential_2d):
        assert trace_coefficient(1, field_2d, potential_2d, PHI, TorusDomain(2, UNIT, 8)) == 0.0
        assert f1_pointwise([0.1, 0.2]) == 0.0
        assert f1_pointwise(np.zeros((3, 4, 2))).shape == (3, 4)


class TestSecondCoefficient:
    def test_two_dimensional_closed_form(self, field_2d, potential_2d, rng):
        # in 2D: f₂ = |∇V|² φ''(V)/(48π) + (b² + ΔV) φ'(V)/(24π)
        x = rng.uniform(0, 1, (15, 2))
        v = potential_2d(x)
        grad2 = sum(g(x) ** 2 for g in potential_2d.gradient())
        lap = potential_2d.laplacian()(x)
        b = field_2d.component(0, 1)(x)
        ref = grad2 * PHI.derivative(v, 2) / (48 * math.pi) + (b**2 + lap) * PHI.derivative(v, 1) / (24 * math.pi)
        got = f2_pointwise(field_2d, potential_2d, x, PHI)
        np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-14 * np.abs(ref).max())

    def test_flat_data(self):
        B = MagneticField.zero(2, UNIT)
        V = ScalarField.const(UNIT, 1.3)
        assert f2_pointwise(B, V, [0.4, 0.1], PHI) == 0.0

    def test_even_in_field(self, field_2d, potential_2d, rng):
        x = rng.uniform(0, 1, (10, 2))
        minus = MagneticField.planar(-1.0 * field_2d.component(0, 1))
        np.testing.assert_allclose(f2_pointwise(minus, potential_2d, x, PHI), f2_pointwise(field_2d, potential_2d, x, PHI), rtol=1e-15)

    def test_three_dimensional_constant_potential(self, field_3d, rng):
        # with V constant only the field term survives: -(1/6)·½ΣB² · F[φ'']
        V = ScalarField.const((1.0, 1.0, 1.0), 0.8)
        x = rng.uniform(0, 1, (5, 3))
        b2 = sum(c(x) ** 2 for c in field_3d.upper.values())
        F2 = 4 * math.pi * quad_1d(lambda r: PHI.derivative(r * r + 0.8, 2) * r * r, 0.0, math.sqrt(11.0 - 0.8)) / (2 * math.pi) ** 3
        np.testing.assert_allclose(f2_pointwise(field_3d, V, x, PHI), -b2 * F2 / 6.0, rtol=1e-9)

    def test_invalid_order(self, field_2d, potential_2d):
        with pytest.raises(ValueError):
            coefficient_field(3, field_2d, potential_2d, PHI, TorusDomain(2, UNIT, 8))


class TestIntegratedCoefficients:
    @pytest.mark.parametrize("r", [0, 2])
    def test_grid_doubling(self, r, field_2d, potential_2d):
        dom = TorusDomain(2, UNIT, 8)
        a = trace_coefficient(r, field_2d, potential_2d, PHI, dom, grid_n=64)
        b = trace_coefficient(r, field_2d, potential_2d, PHI, dom, grid_n=128)
        assert abs(a - b) <= 1e-10 * max(abs(b), 1.0)

    @pytest.mark.parametrize("r", [0, 2])
    def test_linear_in_phi(self, r, field_2d, potential_2d):
        dom = TorusDomain(2, UNIT, 8)
        a = trace_coefficient(r, field_2d, potential_2d, PHI, dom)
        b = trace_coefficient(r, field_2d, potential_2d, PHI.scaled(2.5), dom)
        assert b == pytest.approx(2.5 * a, rel=1e-13)

    @pytest.mark.parametrize("r", [0, 2])
    def test_potential_shift_covariance(self, r, field_2d, potential_2d):
        dom = TorusDomain(2, UNIT, 8)
        a = trace_coefficient(r, field_2d, potential_2d, PHI, dom)
        b = trace_coefficient(r, field_2d, potential_2d + 1.5, PHI.shifted(-1.5), dom)
        assert b == pytest.approx(a, rel=1e-10)

    def test_volume_scaling_of_constant_data(self):
        small = TorusDomain(2, UNIT, 8)
        big = TorusDomain(2, (2.0, 3.0), 8)
        V = lambda dom: ScalarField.const(dom.periods, 0.4)
        B = lambda dom: MagneticField.zero(2, dom.periods)
        a = trace_coefficient(0, B(small), V(small), SMALL, small)
        b = trace_coefficient(0, B(big), V(big), SMALL, big)
        assert b == pytest.approx(6.0 * a, rel=1e-13)
