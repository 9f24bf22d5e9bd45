"""Fourier discretization of the magnetic Schrödinger operator."""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from semitrace.discretize import (
    apply,
    assemble_dense,
    build_operator,
    export_dense,
    grid_size_rule,
    load_dense,
    prolong,
)
from semitrace.eig import dense_hermitian_eig
from semitrace.model import ScalarField, TorusDomain, VectorPotential
from semitrace.suites import gauge_spectrum_shift

from conftest import UNIT


def free_spectrum(domain: TorusDomain, p: float) -> np.ndarray:
    k = np.fft.fftfreq(domain.grid_n, d=1.0 / domain.grid_n)
    vals = [sum((2 * math.pi * kj / (p * L)) ** 2 for kj, L in zip(ks, domain.periods)) for ks in itertools.product(k, repeat=domain.d)]
    return np.sort(vals)


@pytest.fixture
def generic_op(field_2d, potential_2d):
    return build_operator(TorusDomain(2, UNIT, 16), field_2d, potential_2d, 6.0)


class TestBuildOperator:
    @pytest.mark.parametrize("periods, n, p", [((1.0, 1.0), 8, 3.0), ((1.0, 2.0), 12, 5.5), ((2 * math.pi,) * 2, 10, 1.0)])
    def test_free_spectrum_is_exact(self, periods, n, p):
        dom = TorusDomain(2, periods, n)
        op = build_operator(dom, None, None, p)
        vals = dense_hermitian_eig(assemble_dense(op), vectors=False).values
        np.testing.assert_allclose(vals, free_spectrum(dom, p), atol=1e-10)

    def test_free_spectrum_3d(self):
        dom = TorusDomain(3, (1.0, 1.0, 1.0), 8)
        op = build_operator(dom, None, None, 4.0)
        vals = dense_hermitian_eig(assemble_dense(op), vectors=False).values
        np.testing.assert_allclose(vals, free_spectrum(dom, 4.0), atol=1e-10)

    def test_constant_potential_shifts_spectrum(self, field_2d):
        dom = TorusDomain(2, UNIT, 12)
        base = dense_hermitian_eig(assemble_dense(build_operator(dom, field_2d, None, 4.0)), vectors=False).values
        shifted = dense_hermitian_eig(
            assemble_dense(build_operator(dom, field_2d, ScalarField.const(UNIT, 2.75), 4.0)), vectors=False
        ).values
        np.testing.assert_allclose(shifted - base, 2.75, atol=1e-10)

    def test_gauge_invariance_of_spectrum(self, field_2d, potential_2d):
        A = VectorPotential.from_field(field_2d)
        chi = ScalarField(UNIT, (((1, 0), 0.1, 0.05), ((0, 1), 0.05, 0.05)))
        shift = gauge_spectrum_shift(A, potential_2d, chi, TorusDomain(2, UNIT, 32), 8.0, count=100)
        assert shift <= 1e-10

    def test_positivity(self, field_2d):
        V = ScalarField(UNIT, (((1, 1), 0.5, 0.0),), 0.5)  # V >= 0
        op = build_operator(TorusDomain(2, UNIT, 16), field_2d, V, 5.0)
        assert dense_hermitian_eig(assemble_dense(op), vectors=False).values[0] >= -1e-10

    def test_resolved_eigenvalues_stable_under_grid_doubling(self, field_2d, potential_2d):
        # the bare sizing rule gives its minimum (8) here; the ladder certifies
        # a posteriori, so the property is checked on a modestly resolved grid
        p, top, n = 4.0, 11.0, 12
        coarse = dense_hermitian_eig(assemble_dense(build_operator(TorusDomain(2, UNIT, n), field_2d, potential_2d, p)), False)
        fine = dense_hermitian_eig(assemble_dense(build_operator(TorusDomain(2, UNIT, 2 * n), field_2d, potential_2d, p)), False)
        inside = coarse.values[coarse.values <= top]
        assert inside.size > 0
        np.testing.assert_allclose(fine.values[: inside.size], inside, atol=1e-8)


class TestApply:
    def test_constants_in_kernel_of_free_operator(self):
        op = build_operator(TorusDomain(2, UNIT, 8), None, None, 2.0)
        np.testing.assert_allclose(apply(op, np.ones(64)), 0.0, atol=1e-14)

    @pytest.mark.parametrize("k", [(1, 0), (2, -3), (4, 4)])
    def test_fourier_mode_eigenrelation(self, k):
        dom = TorusDomain(2, (1.0, 1.5), 12)
        p = 3.0
        op = build_operator(dom, None, None, p)
        x = dom.grid_points()
        u = np.exp(2j * np.pi * (k[0] * x[..., 0] / 1.0 + k[1] * x[..., 1] / 1.5))
        lam = (2 * np.pi * k[0] / (p * 1.0)) ** 2 + (2 * np.pi * k[1] / (p * 1.5)) ** 2
        np.testing.assert_allclose(op.apply(u), lam * u, atol=1e-13 * max(lam, 1.0))

    def test_hermiticity(self, generic_op, rng):
        u = rng.normal(size=256) + 1j * rng.normal(size=256)
        v = rng.normal(size=256) + 1j * rng.normal(size=256)
        lhs = generic_op.quadratic_form(u, v)
        rhs = np.conj(generic_op.quadratic_form(v, u))
        assert abs(lhs - rhs) <= 1e-12 * abs(lhs)

    def test_grid_and_flat_layouts_agree(self, generic_op, rng):
        u = rng.normal(size=(3, 16, 16))
        np.testing.assert_allclose(generic_op.apply(u).reshape(3, -1), generic_op.apply(u.reshape(3, -1)), atol=1e-13)

    def test_shape_mismatch(self, generic_op):
        with pytest.raises(ValueError):
            generic_op.apply(np.ones(17))


class TestAssembleDense:
    def test_free_matrix_diagonal_in_fourier_basis(self):
        dom = TorusDomain(2, UNIT, 8)
        M = assemble_dense(build_operator(dom, None, None, 2.0))
        F = np.kron(np.fft.fft(np.eye(8), norm="ortho"), np.fft.fft(np.eye(8), norm="ortho"))
        D = F @ M @ F.conj().T
        assert np.max(np.abs(D - np.diag(np.diag(D)))) <= 1e-12

    def test_matches_matrix_free_application(self, generic_op, rng):
        M = assemble_dense(generic_op)
        X = rng.normal(size=(256, 10)) + 1j * rng.normal(size=(256, 10))
        np.testing.assert_allclose(M @ X, generic_op.apply_columns(X), atol=1e-12 * np.abs(M).max())

    def test_hermitian(self, generic_op):
        M = assemble_dense(generic_op)
        assert np.max(np.abs(M - M.conj().T)) <= 1e-12

    def test_dimension_cap(self, generic_op):
        with pytest.raises(ValueError):
            assemble_dense(generic_op, cap=100)

    def test_binary_round_trip(self, generic_op, tmp_path):
        M = assemble_dense(generic_op)
        export_dense(M, tmp_path / "op.bin")
        np.testing.assert_array_equal(load_dense(tmp_path / "op.bin"), M)


class TestGridTools:
    @pytest.mark.parametrize("p, e_max, kmax", [(8, 11.0, 1), (40, 11.0, 1), (2, 1.0, 5), (16, 0.0, 0)])
    def test_grid_rule(self, p, e_max, kmax):
        n = grid_size_rule(p, UNIT, e_max, kmax=kmax)
        assert n % 4 == 0 and n >= 8
        assert n >= 4 * kmax
        assert n >= 1.5 * p * math.sqrt(e_max) / math.pi

    @pytest.mark.parametrize("n, m", [(8, 8), (8, 16), (12, 20)])
    def test_prolongation_is_isometric(self, n, m, rng):
        dom = TorusDomain(2, UNIT, n)
        u = rng.normal(size=(4, n * n)) + 1j * rng.normal(size=(4, n * n))
        v = prolong(u, dom, m)
        fine = dom.with_grid(m)
        gram_coarse = u.conj() @ u.T * dom.cell_volume
        gram_fine = v.conj() @ v.T * fine.cell_volume
        np.testing.assert_allclose(gram_fine, gram_coarse, atol=1e-12 * np.abs(gram_coarse).max())

    def test_prolongation_interpolates_band_limited_functions(self):
        dom = TorusDomain(2, UNIT, 8)
        f = lambda x: np.cos(2 * np.pi * (x[..., 0] + 2 * x[..., 1])) + np.sin(2 * np.pi * 3 * x[..., 0])
        v = prolong(f(dom.grid_points()).reshape(1, -1), dom, 16)
        np.testing.assert_allclose(v.reshape(16, 16).real, f(dom.with_grid(16).grid_points()), atol=1e-13)
