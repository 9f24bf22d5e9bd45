"""Self-contained numerical check suites.

Each suite measures the quantities behind one family of properties and
returns a small result object; tolerances are applied by the caller (the
CLI report, or the tests).

* :func:`gauge_suite` — transverse gauge: transversality, Taylor components
  against a polynomial fit along rays, the gauge identity
  ``A + ∇Φ = A^{(x0)}`` (finite differences), and invariance of the
  discrete spectrum under a periodic gauge change.
* :func:`expansion_suite` — decay orders of the truncated operator
  expansion on a dyadic ``h`` ladder.
* :func:`hs_suite` — functional calculus against eigendecomposition on
  random Hermitian matrices.
* :func:`weyl_check` — free operator: exact lattice trace against the
  leading coefficient.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .coeffs import trace_coefficient
from .discretize import assemble_dense, build_operator
from .gauge import fock_schwinger_potential, gauge_phase, taylor_vector_potential
from .hsfc import hs_apply, hs_derivative
from .model import MagneticField, ScalarField, TestFunction, TorusDomain, VectorPotential
from .opexpand import GaussianMonomial, expansion_order_check
from .verify import lattice_trace

__all__ = [
    "GaugeReport",
    "ExpansionReport",
    "HSReport",
    "WeylReport",
    "gauge_suite",
    "taylor_fit_error",
    "phase_identity_error",
    "gauge_spectrum_shift",
    "expansion_suite",
    "hs_suite",
    "random_hermitian",
    "weyl_check",
]


# ---------------------------------------------------------------------------
# Gauge
# ---------------------------------------------------------------------------


@dataclass
class GaugeReport:
    """Largest deviations measured by :func:`gauge_suite`."""

    transversality: float
    taylor_fit: float
    phase_identity: float
    spectrum_shift: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def taylor_fit_error(
    B: MagneticField, x0, directions: np.ndarray, max_order: int = 3, radius: float = 0.1, degree: int = 12
) -> float:
    """Homogeneous Taylor terms against a polynomial fit along rays.

    Along each unit direction ``ω`` the map ``t ↦ A^{(x0)}(tω)`` is sampled at
    Chebyshev points of ``[-radius, radius]`` (scaled by the smallest period)
    and fitted by a polynomial of ``degree``; its ``t^r`` coefficient must
    equal ``A_r(ω)``.
    """
    scale = radius * min(B.periods)
    nodes = scale * np.cos(np.pi * (np.arange(4 * degree) + 0.5) / (4 * degree))
    terms = [taylor_vector_potential(B, x0, r) for r in range(1, max_order + 1)]
    worst = 0.0
    for omega in directions:
        pts = nodes[:, None] * omega[None, :]
        vals = fock_schwinger_potential(B, x0, pts)  # (n, d)
        V = np.vander(nodes / scale, degree + 1, increasing=True)
        coef, *_ = np.linalg.lstsq(V, vals, rcond=None)
        for r, term in enumerate(terms, start=1):
            fitted = coef[r] / scale**r
            worst = max(worst, float(np.max(np.abs(fitted - term(omega)))))
    return worst


def phase_identity_error(A: VectorPotential, B: MagneticField, x0, Z: np.ndarray, step: float = 1e-3) -> float:
    """``max |A(x0 + Z) + ∇_Z Φ(Z) - A^{(x0)}(Z)|`` with a 4th-order stencil."""
    x0 = np.asarray(x0, dtype=float)
    d = Z.shape[-1]
    grad = np.zeros_like(Z)
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        f = [gauge_phase(A, x0, Z + s * e) for s in (-2, -1, 1, 2)]
        grad[..., j] = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * step)
    lhs = A(x0 + Z) + grad
    rhs = fock_schwinger_potential(B, x0, Z)
    return float(np.max(np.abs(lhs - rhs)))


def gauge_spectrum_shift(
    A: VectorPotential,
    V: ScalarField,
    chi: ScalarField,
    domain: TorusDomain,
    p: float,
    count: int = 100,
) -> float:
    """Largest change of the lowest ``count`` eigenvalues under ``A ↦ A + ∇χ``."""
    H1 = assemble_dense(build_operator(domain, A, V, p))
    H2 = assemble_dense(build_operator(domain, A.gauge_shifted(chi), V, p))
    e1 = np.linalg.eigvalsh(H1)[:count]
    e2 = np.linalg.eigvalsh(H2)[:count]
    return float(np.max(np.abs(e1 - e2)))


def gauge_suite(
    B: MagneticField,
    V: ScalarField,
    seed: int = 0,
    points: int = 100,
    base_points: int = 3,
    gauge_amplitude: float = 0.1,
    gauge_grid: int = 32,
    gauge_p: float = 8.0,
    eigen_count: int = 100,
) -> GaugeReport:
    """Run all transverse-gauge checks for a flux-free field.

    Parameters
    ----------
    B, V : field data (``V`` only enters the spectral check).
    seed : int
        Seed for base points, displacements and ray directions.
    points : int
        Random displacements per check.
    base_points : int
        Number of random base points ``x0``.
    gauge_amplitude, gauge_grid, gauge_p, eigen_count
        Periodic gauge function amplitude, grid points per axis (dense
        dimension ``gauge_grid**d``), semiclassical parameter and number of
        compared eigenvalues.
    """
    rng = np.random.default_rng(seed)
    d = B.d
    periods = np.asarray(B.periods)
    A = VectorPotential.from_field(B)
    trans = taylor = phase = 0.0
    for _ in range(base_points):
        x0 = rng.uniform(0, 1, d) * periods
        Z = rng.uniform(-0.5, 0.5, (points, d)) * periods
        AZ = fock_schwinger_potential(B, x0, Z)
        trans = max(trans, float(np.max(np.abs(np.sum(AZ * Z, axis=-1)))))
        dirs = rng.normal(size=(8, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        taylor = max(taylor, taylor_fit_error(B, x0, dirs))
        phase = max(phase, phase_identity_error(A, B, x0, Z))
    modes = tuple(
        (tuple(int(j == i) for j in range(d)), gauge_amplitude / (i + 1), 0.5 * gauge_amplitude) for i in range(d)
    )
    chi = ScalarField(tuple(periods), modes)
    domain = TorusDomain(d, tuple(periods), gauge_grid)
    shift = gauge_spectrum_shift(A, V, chi, domain, gauge_p, eigen_count)
    return GaugeReport(
        trans,
        taylor,
        phase,
        shift,
        {"dense_dimension": domain.size, "p": gauge_p, "eigenvalues": eigen_count, "seed": seed},
    )


# ---------------------------------------------------------------------------
# Operator expansion
# ---------------------------------------------------------------------------


@dataclass
class ExpansionReport:
    """Observed remainder orders per truncation order ``m``."""

    h: list[float]
    orders: dict[int, float]
    remainders: dict[int, list[float]]
    saturated: dict[int, bool]

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "orders": {str(k): v for k, v in self.orders.items()},
            "remainders": {str(k): v for k, v in self.remainders.items()},
            "saturated": {str(k): v for k, v in self.saturated.items()},
        }


def expansion_suite(
    B: MagneticField,
    V: ScalarField,
    x0: Sequence[float] | None = None,
    exponents: Sequence[int] | None = None,
    h_ladder: Sequence[float] = tuple(2.0**-k for k in range(2, 8)),
    truncations: Sequence[int] = (0, 1, 2),
) -> ExpansionReport:
    """Decay orders of ``𝓗_h u - Σ_{r≤m} h^r H⁽ʳ⁾u`` for ``m`` in ``truncations``.

    The input ``u`` is a Gaussian times a monomial with closed-form
    derivatives; ``x0`` defaults to a generic interior point.
    """
    d = B.d
    if x0 is None:
        x0 = tuple(0.3 * L + 0.07 * i for i, L in enumerate(B.periods))
    if exponents is None:
        exponents = tuple([1, 2, 0][:d])
    u = GaussianMonomial(tuple(exponents), tuple([0.1, -0.2, 0.05][:d]), 0.8)
    orders, rems, sat = {}, {}, {}
    for m in truncations:
        chk = expansion_order_check(B, V, x0, u, h_ladder, m=m)
        orders[m] = chk.slope
        rems[m] = [float(r) for r in chk.remainders]
        sat[m] = chk.saturated
    return ExpansionReport([float(h) for h in sorted(h_ladder)], orders, rems, sat)


# ---------------------------------------------------------------------------
# Functional calculus
# ---------------------------------------------------------------------------


def random_hermitian(n: int, window: tuple[float, float], rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random Hermitian matrix with uniform spectrum in ``window``.

    Returns ``(H, eigenvalues, eigenvectors)``; the unitary is Haar-like
    (QR of a complex Gaussian matrix).
    """
    G = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    Q, R = np.linalg.qr(G)
    Q = Q * (np.diag(R) / np.abs(np.diag(R)))[None, :]
    lam = rng.uniform(window[0], window[1], n)
    H = (Q * lam) @ Q.conj().T
    return 0.5 * (H + H.conj().T), lam, Q


@dataclass
class HSReport:
    """Spectral-norm errors of the resolvent-integral route."""

    apply_error: float
    derivative_errors: dict[int, float]
    hermitian_defect: float
    commutator: float
    settings: dict

    def to_dict(self) -> dict:
        out = asdict(self)
        out["derivative_errors"] = {str(k): v for k, v in self.derivative_errors.items()}
        return out


def hs_suite(
    phi: TestFunction,
    n: int = 50,
    matrices: int = 3,
    window: tuple[float, float] | None = None,
    N: int = 4,
    delta: float = 1.0,
    quad_n: int = 60,
    derivatives: Sequence[int] = (1, 2),
    seed: int = 0,
) -> HSReport:
    """Compare ``φ^{(k)}(H)`` from the resolvent integral with ``Σ φ^{(k)}(λ_i) v_i v_i*``.

    The spectra are drawn uniformly from ``window`` (default: ``supp φ``
    widened by 5% on each side, so some eigenvalues sit outside the
    support).
    """
    rng = np.random.default_rng(seed)
    a, b = phi.support
    if window is None:
        pad = 0.05 * (b - a)
        window = (a - pad, b + pad)
    err = herm = comm = 0.0
    derr = {k: 0.0 for k in derivatives}
    for _ in range(matrices):
        H, lam, Q = random_hermitian(n, window, rng)
        F = hs_apply(phi, H, N, delta, quad_n)
        ref = (Q * phi(lam)) @ Q.conj().T
        err = max(err, float(np.linalg.norm(F - ref, 2)))
        herm = max(herm, float(np.linalg.norm(F - F.conj().T, 2)))
        comm = max(comm, float(np.linalg.norm(F @ H - H @ F, 2)))
        for k in derivatives:
            Fk = hs_derivative(phi, H, k, N, delta, quad_n)
            refk = (Q * phi.derivative(lam, k)) @ Q.conj().T
            derr[k] = max(derr[k], float(np.linalg.norm(Fk - refk, 2)))
    settings = {"n": n, "matrices": matrices, "window": list(window), "N": N, "delta": delta, "quad_n": quad_n, "seed": seed}
    return HSReport(err, derr, herm, comm, settings)


# ---------------------------------------------------------------------------
# Free operator
# ---------------------------------------------------------------------------


@dataclass
class WeylReport:
    """Exact free trace against its leading-order prediction."""

    p: float
    trace: float
    f0: float
    rel_error: float

    def to_dict(self) -> dict:
        return asdict(self)


def weyl_check(phi: TestFunction, domain: TorusDomain, p: float) -> WeylReport:
    """``|T(p) p^{-d} - f_0(φ)| / f_0(φ)`` for ``A = 0, V = 0``."""
    d = domain.d
    T = lattice_trace(phi, domain, p)
    zero_B = MagneticField.zero(d, domain.periods)
    f0 = trace_coefficient(0, zero_B, ScalarField.zero(domain.periods), phi, domain)
    rel = abs(T * p ** (-d) - f0) / abs(f0) if f0 else math.inf
    return WeylReport(float(p), T, f0, rel)
