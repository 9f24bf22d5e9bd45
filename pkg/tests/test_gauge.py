"""Transverse gauge, gauge phase and Taylor terms."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import quad

from semitrace.gauge import (
    fock_schwinger_divergence,
    fock_schwinger_potential,
    gauge_phase,
    taylor_polynomial,
    taylor_vector_potential,
)
from semitrace.model import MagneticField, ScalarField, VectorPotential
from semitrace.suites import phase_identity_error, taylor_fit_error

from conftest import UNIT


def quad_oracle(B: MagneticField, x0, Z) -> np.ndarray:
    """``A_j(Z) = ∫_0^1 τ Σ_k Z_k B_{kj}(x0 + τZ) dτ`` by adaptive quadrature."""
    x0, Z = np.asarray(x0, float), np.asarray(Z, float)
    out = np.zeros(B.d)
    for j in range(B.d):
        f = lambda t: t * float(Z @ B(x0 + t * Z)[:, j])
        out[j] = quad(f, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=200)[0]
    return out


@pytest.fixture(params=["2d", "3d"])
def field(request, field_2d, field_3d):
    return field_2d if request.param == "2d" else field_3d


class TestTransversePotential:
    def test_vanishes_at_origin(self, field):
        x0 = np.full(field.d, 0.3)
        np.testing.assert_array_equal(fock_schwinger_potential(field, x0, np.zeros(field.d)), 0.0)

    @pytest.mark.parametrize("b", [1.0, -2.5])
    def test_constant_field(self, b):
        B = MagneticField.planar(ScalarField.const(UNIT, b))  # local formula only; flux ignored
        Z = np.array([0.3, -0.7])
        A = fock_schwinger_potential(B, [0.1, 0.2], Z)
        np.testing.assert_allclose(A, [-0.5 * b * Z[1], 0.5 * b * Z[0]], atol=1e-15)

    def test_against_adaptive_quadrature(self, field, rng):
        worst = 0.0
        for _ in range(20):
            x0 = rng.uniform(0, 1, field.d)
            Z = rng.normal(size=field.d) * 0.4
            ref = quad_oracle(field, x0, Z)
            got = fock_schwinger_potential(field, x0, Z)
            worst = max(worst, np.linalg.norm(got - ref) / np.linalg.norm(ref))
        assert worst <= 1e-10

    def test_transversality(self, field, rng):
        x0 = rng.uniform(0, 1, (100, field.d))
        Z = rng.normal(size=(100, field.d))
        A = fock_schwinger_potential(field, x0, Z)
        lhs = np.abs(np.sum(Z * A, axis=-1))
        assert np.all(lhs <= 1e-12 * np.linalg.norm(Z, axis=-1) * np.linalg.norm(A, axis=-1) + 1e-300)

    def test_divergence_matches_finite_differences(self, field_2d, rng):
        x0 = rng.uniform(0, 1, 2)
        Z = rng.normal(size=2) * 0.3
        h = 1e-5
        fd = 0.0
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd += (fock_schwinger_potential(field_2d, x0, Z + e)[j] - fock_schwinger_potential(field_2d, x0, Z - e)[j]) / (2 * h)
        assert fock_schwinger_divergence(field_2d, x0, Z) == pytest.approx(fd, abs=1e-8)


class TestGaugePhase:
    def test_vanishes_at_origin(self, field_2d):
        A = VectorPotential.from_field(field_2d)
        assert gauge_phase(A, [0.2, 0.4], [0.0, 0.0]) == 0.0

    def test_constant_potential(self):
        a = np.array([0.7, -1.3])
        A = VectorPotential((ScalarField.const(UNIT, a[0]), ScalarField.const(UNIT, a[1])))
        Z = np.array([0.25, 0.5])
        assert gauge_phase(A, [0.1, 0.9], Z) == pytest.approx(-a @ Z, abs=1e-15)

    def test_phase_identity(self, field, rng):
        A = VectorPotential.from_field(field)
        worst = 0.0
        for _ in range(20):
            x0 = rng.uniform(0, 1, field.d)
            Z = rng.normal(size=(1, field.d)) * 0.3
            worst = max(worst, phase_identity_error(A, field, x0, Z))
        assert worst <= 1e-6


class TestTaylorTerms:
    def test_first_order_term(self, field, rng):
        x0 = rng.uniform(0, 1, field.d)
        Z = rng.normal(size=field.d)
        got = taylor_vector_potential(field, x0, 1)(Z)
        expected = 0.5 * Z @ field(x0)  # A_j = ½ Σ_k B_kj Z_k
        np.testing.assert_allclose(got, expected, atol=1e-14)

    def test_second_order_term(self, field, rng):
        x0 = rng.uniform(0, 1, field.d)
        Z = rng.normal(size=field.d)
        d = field.d
        expected = np.zeros(d)
        for j in range(d):
            for k in range(d):
                for l in range(d):
                    alpha = [0] * d
                    alpha[l] = 1
                    expected[j] += field.component(k, j).derivative(alpha)(x0) * Z[k] * Z[l] / 3.0
        np.testing.assert_allclose(taylor_vector_potential(field, x0, 2)(Z), expected, atol=1e-13)

    @pytest.mark.parametrize("r", [1, 2, 3, 4])
    def test_homogeneity(self, field_2d, r, rng):
        term = taylor_vector_potential(field_2d, [0.3, 0.6], r)
        Z = rng.normal(size=2)
        for lam in (0.5, 3.0):
            np.testing.assert_allclose(term(lam * Z), lam**r * term(Z), rtol=1e-13, atol=1e-14)
        assert all(p.is_homogeneous(r) for p in term.components if not p.is_zero())

    def test_terms_match_small_z_fit(self, field, rng):
        x0 = rng.uniform(0, 1, field.d)
        dirs = rng.normal(size=(3, field.d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        assert taylor_fit_error(field, x0, dirs, max_order=3) <= 1e-6

    @pytest.mark.parametrize("m", [1, 2, 3])
    def test_truncation_order(self, field_2d, m):
        x0 = np.array([0.15, 0.4])
        u = np.array([0.6, 0.8])
        radii = 2.0 ** -np.arange(3, 9)
        poly = taylor_polynomial(field_2d, x0, m)
        errs = []
        for s in radii:
            Z = s * u
            exact = fock_schwinger_potential(field_2d, x0, Z)
            approx = np.array([p(Z).real for p in poly])
            errs.append(np.linalg.norm(exact - approx))
        slope = np.polyfit(np.log(radii), np.log(errs), 1)[0]
        assert slope >= m + 0.8

    def test_order_range(self, field_2d):
        with pytest.raises(ValueError):
            taylor_vector_potential(field_2d, [0.0, 0.0], 5)
