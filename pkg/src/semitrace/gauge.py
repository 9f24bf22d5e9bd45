"""Transverse (Fock–Schwinger) gauge around a base point.

For a base point ``x0`` the transverse potential is

.. math::

    A^{(x_0)}_j(Z) = \\sum_k \\Big(\\int_0^1 B_{kj}(x_0 + \\tau Z)\\,\\tau\\,d\\tau\\Big) Z_k ,

which satisfies ``Σ_j Z_j A_j^{(x0)}(Z) = 0`` identically because ``B`` is
antisymmetric.  It is gauge equivalent to any periodic potential ``A`` with
``dA = B`` through the phase

.. math::

    \\Phi^{(x_0)}(Z) = -\\sum_j \\int_0^1 A_j(x_0 + \\tau Z)\\,Z_j\\,d\\tau ,
    \\qquad A(x_0 + Z) + \\nabla_Z \\Phi^{(x_0)}(Z) = A^{(x_0)}(Z).

Its Taylor expansion at ``Z = 0`` has homogeneous pieces

.. math::

    A_{j,r}(Z) = \\frac{1}{r+1} \\sum_{|\\alpha| = r-1} \\sum_k
        \\partial^\\alpha B_{kj}(x_0)\\, Z_k \\frac{Z^\\alpha}{\\alpha!} .

All line integrals use a fixed 16-node Gauss–Legendre rule on ``[0, 1]``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import MagneticField, VectorPotential
from .polynomial import Poly

__all__ = [
    "GAUSS_NODES",
    "TransversePotential",
    "HomogeneousTaylorTerm",
    "fock_schwinger_potential",
    "fock_schwinger_divergence",
    "gauge_phase",
    "taylor_vector_potential",
    "taylor_polynomial",
    "multi_indices",
]

#: Number of Gauss–Legendre nodes for the τ-integrals.
GAUSS_NODES = 16


@lru_cache(maxsize=None)
def _tau_rule(n: int = GAUSS_NODES) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _segment_points(x0: np.ndarray, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Points ``x0 + τ_q Z`` with shape ``(..., q, d)`` and the τ nodes."""
    tau, _ = _tau_rule()
    pts = x0[..., None, :] + tau[:, None] * Z[..., None, :]
    return pts, tau


def fock_schwinger_potential(B: MagneticField, x0, Z) -> np.ndarray:
    """Transverse potential ``A^{(x0)}(Z)``.

    Parameters
    ----------
    B : MagneticField
    x0 : array_like, shape (d,) or (..., d)
        Base point(s).
    Z : array_like, shape (..., d)
        Displacements; leading axes broadcast against those of ``x0``.

    Returns
    -------
    ndarray, shape (..., d)
    """
    x0 = np.asarray(x0, dtype=float)
    Z = np.asarray(Z, dtype=float)
    pts, tau = _segment_points(x0, Z)
    _, w = _tau_rule()
    Bvals = B(pts)  # (..., q, d, d) with [k, j] = B_kj
    # ∫ B_kj(x0 + τZ) τ dτ
    weighted = np.einsum("q,...qkj->...kj", w * tau, Bvals)
    return np.einsum("...kj,...k->...j", weighted, Z)


def fock_schwinger_divergence(B: MagneticField, x0, Z) -> np.ndarray:
    """``Σ_j ∂A_j^{(x0)}/∂Z_j`` at ``Z``.

    Differentiating under the integral gives
    ``Σ_{j,k} Z_k ∫ τ² (∂_j B_{kj})(x0 + τZ) dτ``; the term with
    ``∂Z_k/∂Z_j`` drops out since ``B_jj = 0``.
    """
    x0 = np.asarray(x0, dtype=float)
    Z = np.asarray(Z, dtype=float)
    pts, tau = _segment_points(x0, Z)
    _, w = _tau_rule()
    d = B.d
    # c_k(x) = Σ_j ∂_j B_kj(x)
    cvals = np.zeros(pts.shape[:-1] + (d,))
    for k in range(d):
        for j in range(d):
            if j != k:
                cvals[..., k] += B.component(k, j).partial(j)(pts)
    integrated = np.einsum("q,...qk->...k", w * tau**2, cvals)
    return np.einsum("...k,...k->...", integrated, Z)


def gauge_phase(A: VectorPotential, x0, Z) -> np.ndarray | float:
    """Gauge phase ``Φ^{(x0)}(Z) = -Σ_j ∫_0^1 A_j(x0 + τZ) Z_j dτ``."""
    x0 = np.asarray(x0, dtype=float)
    Z = np.asarray(Z, dtype=float)
    pts, _ = _segment_points(x0, Z)
    _, w = _tau_rule()
    Avals = A(pts)  # (..., q, d)
    integrated = np.einsum("q,...qj->...j", w, Avals)
    out = -np.einsum("...j,...j->...", integrated, Z)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class TransversePotential:
    """Callable wrapper around :func:`fock_schwinger_potential`."""

    B: MagneticField
    x0: tuple[float, ...]

    def __call__(self, Z) -> np.ndarray:
        return fock_schwinger_potential(self.B, np.array(self.x0), Z)

    def divergence(self, Z) -> np.ndarray:
        return fock_schwinger_divergence(self.B, np.array(self.x0), Z)


def multi_indices(d: int, order: int):
    """All multi-indices ``α ∈ N^d`` with ``|α| = order`` (lexicographic)."""
    for combo in itertools.combinations_with_replacement(range(d), order):
        alpha = [0] * d
        for j in combo:
            alpha[j] += 1
        yield tuple(alpha)


@dataclass(frozen=True)
class HomogeneousTaylorTerm:
    """Degree-``r`` part ``A_{·,r}`` of the transverse potential at ``x0``."""

    order: int
    x0: tuple[float, ...]
    components: tuple[Poly, ...]

    def __call__(self, Z) -> np.ndarray:
        return np.stack([p(Z).real for p in self.components], axis=-1)


#: Supported range of Taylor orders.
MAX_TAYLOR_ORDER = 4


def taylor_vector_potential(B: MagneticField, x0, r: int) -> HomogeneousTaylorTerm:
    """Homogeneous Taylor component of order ``r`` of ``A^{(x0)}``.

    Raises
    ------
    ValueError
        If ``r`` is outside ``1..4``.
    """
    if not 1 <= r <= MAX_TAYLOR_ORDER:
        raise ValueError(f"Taylor order must be in [1, {MAX_TAYLOR_ORDER}], got {r}")
    x0 = np.asarray(x0, dtype=float)
    d = B.d
    comps = []
    for j in range(d):
        poly = Poly.zero(d)
        for alpha in multi_indices(d, r - 1):
            afact = math.prod(math.factorial(a) for a in alpha)
            for k in range(d):
                if k == j:
                    continue
                val = float(B.component(k, j).derivative(alpha)(x0))
                if val == 0.0:
                    continue
                expo = list(alpha)
                expo[k] += 1
                poly = poly + Poly(d, ((tuple(expo), val / ((r + 1) * afact)),))
        comps.append(poly)
    return HomogeneousTaylorTerm(r, tuple(x0), tuple(comps))


def taylor_polynomial(B: MagneticField, x0, m: int) -> list[Poly]:
    """``Σ_{r=1}^{m} A_{j,r}`` as one polynomial per component."""
    total = [Poly.zero(B.d) for _ in range(B.d)]
    for r in range(1, m + 1):
        term = taylor_vector_potential(B, x0, r)
        total = [t + c for t, c in zip(total, term.components)]
    return total
