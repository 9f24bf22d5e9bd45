"""Rescaled operator around a base point and its model-operator expansion.

In the transverse gauge at ``x0`` and in rescaled coordinates ``Z`` the
operator reads

.. math::

    \\mathcal H_h = -\\sum_j \\big(\\partial_j - i A^{(x_0)}_j(hZ)\\big)^2
                   + V(x_0 + hZ)
                 = -\\Delta + 2i A\\cdot\\nabla + i\\,(\\nabla\\cdot A) + |A|^2 + V .

Expanding ``A^{(x0)}(hZ) = Σ_r h^r A_{·,r}(Z)`` and ``V(x0 + hZ)`` in
powers of ``h`` gives ``𝓗_h = H⁽⁰⁾ + h H⁽¹⁾ + h² H⁽²⁾ + O(h³)`` with

* ``H⁽⁰⁾ = -Δ + V(x0)``
* ``H⁽¹⁾ = i Σ B_kj(x0) Z_k ∂_j + Σ ∂_jV(x0) Z_j``
* ``H⁽²⁾ = 2i Σ A_{j,2} ∂_j + i Σ ∂_j A_{j,2} + Σ A_{j,1}² + ½ Zᵀ ∇²V(x0) Z``.

Operators are :class:`PolyDiffOp` objects acting on separable
Gaussian × monomial inputs whose derivatives are known in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .gauge import (
    fock_schwinger_divergence,
    fock_schwinger_potential,
    multi_indices,
    taylor_vector_potential,
)
from .model import MagneticField, ScalarField
from .polynomial import Poly

__all__ = [
    "PolyDiffOp",
    "GaussianMonomial",
    "InputCombination",
    "RescaledOperator",
    "OrderCheck",
    "model_operator",
    "apply_polydiffop",
    "rescaled_apply",
    "expansion_order_check",
]

MultiIndex = tuple[int, ...]


# ---------------------------------------------------------------------------
# Polynomial differential operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolyDiffOp:
    """``Σ_β c_β(Z) ∂^β`` with polynomial coefficients ``c_β``.

    The weight of a term counts one for every factor ``Z_j`` and every
    derivative; the weight of the operator is the largest term weight.
    """

    d: int
    terms: tuple[tuple[MultiIndex, Poly], ...] = ()

    def __post_init__(self) -> None:
        acc: dict[MultiIndex, Poly] = {}
        for beta, poly in self.terms:
            beta = tuple(int(b) for b in beta)
            if len(beta) != self.d:
                raise ValueError(f"multi-index {beta} has wrong length for d={self.d}")
            acc[beta] = acc.get(beta, Poly.zero(self.d)) + poly
        terms = tuple((b, p) for b, p in sorted(acc.items()) if not p.is_zero())
        object.__setattr__(self, "terms", terms)

    @classmethod
    def from_dict(cls, d: int, terms: Mapping[MultiIndex, Poly]) -> "PolyDiffOp":
        return cls(d, tuple(terms.items()))

    def as_dict(self) -> dict[MultiIndex, Poly]:
        return dict(self.terms)

    def coefficient(self, beta: Sequence[int]) -> Poly:
        return self.as_dict().get(tuple(beta), Poly.zero(self.d))

    @property
    def order(self) -> int:
        """Highest derivative order."""
        return max((sum(b) for b, _ in self.terms), default=0)

    @property
    def weight(self) -> int:
        """``max(deg c_β + |β|)`` over terms; ``-1`` for the zero operator."""
        return max((p.degree + sum(b) for b, p in self.terms), default=-1)

    def __add__(self, other: "PolyDiffOp") -> "PolyDiffOp":
        return PolyDiffOp(self.d, self.terms + other.terms)

    def __mul__(self, s: complex) -> "PolyDiffOp":
        return PolyDiffOp(self.d, tuple((b, p * s) for b, p in self.terms))

    __rmul__ = __mul__

    def distance(self, other: "PolyDiffOp") -> float:
        diff = self + other * -1.0
        return max((p.max_abs_coefficient() for _, p in diff.terms), default=0.0)


def _unit(d: int, j: int, times: int = 1) -> MultiIndex:
    beta = [0] * d
    beta[j] = times
    return tuple(beta)


def model_operator(r: int, x0, B: MagneticField, V: ScalarField) -> PolyDiffOp:
    """Model operator ``H⁽ʳ⁾`` at base point ``x0``.

    Parameters
    ----------
    r : {0, 1, 2}
        Order in ``h``.
    x0 : array_like, shape (d,)
    B : MagneticField
    V : ScalarField

    Returns
    -------
    PolyDiffOp
        Operator of weight at most ``r + 2``.

    Raises
    ------
    ValueError
        For ``r`` outside ``{0, 1, 2}``.
    """
    if r not in (0, 1, 2):
        raise ValueError(f"model operators exist for r in {{0, 1, 2}}, got {r}")
    x0 = np.asarray(x0, dtype=float)
    d = B.d
    zero = (0,) * d
    terms: list[tuple[MultiIndex, Poly]] = []
    if r == 0:
        for j in range(d):
            terms.append((_unit(d, j, 2), Poly.constant(d, -1.0)))
        terms.append((zero, Poly.constant(d, float(V(x0)))))
    elif r == 1:
        A1 = taylor_vector_potential(B, x0, 1).components
        for j in range(d):
            # 2i A_{j,1} ∂_j = i Σ_k B_kj Z_k ∂_j
            terms.append((_unit(d, j), A1[j] * 2j))
            terms.append((zero, Poly.variable(d, j, float(V.partial(j)(x0)))))
    else:
        A1 = taylor_vector_potential(B, x0, 1).components
        A2 = taylor_vector_potential(B, x0, 2).components
        for j in range(d):
            terms.append((_unit(d, j), A2[j] * 2j))
            terms.append((zero, A2[j].partial(j) * 1j))
            terms.append((zero, A1[j] * A1[j]))
        for alpha in multi_indices(d, 2):
            # ½ Σ_{jk} ∂_j∂_k V Z_j Z_k = Σ_{|α|=2} ∂^α V Z^α / α!
            afact = math.prod(math.factorial(a) for a in alpha)
            val = float(V.derivative(alpha)(x0)) / afact
            terms.append((zero, Poly(d, ((alpha, val),))))
    return PolyDiffOp(d, tuple(terms))


# ---------------------------------------------------------------------------
# Closed-form test inputs
# ---------------------------------------------------------------------------


def _gauss_poly_derivatives(m: int, c: float, s: float, nmax: int) -> list[Polynomial]:
    """``P_n`` with ``d^n/dt^n [t^m e^{-(t-c)²/(2s²)}] = P_n(t) e^{-(t-c)²/(2s²)}``."""
    gprime = Polynomial([c / s**2, -1.0 / s**2])
    polys = [Polynomial([0.0] * m + [1.0])]
    for _ in range(nmax):
        p = polys[-1]
        polys.append(p.deriv() + p * gprime)
    return polys


@dataclass(frozen=True)
class GaussianMonomial:
    """Separable input ``u(Z) = coeff · Π_j Z_j^{m_j} exp(-(Z_j - c_j)² / (2σ²))``.

    All mixed partial derivatives are exact products of one-dimensional
    closed forms.
    """

    exponents: tuple[int, ...]
    center: tuple[float, ...]
    sigma: float = 1.0
    coeff: complex = 1.0
    max_order: int = 4

    @property
    def d(self) -> int:
        return len(self.exponents)

    def derivative(self, beta: Sequence[int], Z) -> np.ndarray | complex:
        """``∂^β u(Z)``.

        Raises
        ------
        ValueError
            If ``|β|`` per axis exceeds ``max_order``.
        """
        beta = tuple(beta)
        if any(b > self.max_order for b in beta) or any(b < 0 for b in beta):
            raise ValueError(f"derivative {beta} exceeds available order {self.max_order}")
        Z = np.asarray(Z, dtype=float)
        out = np.full(Z.shape[:-1], complex(self.coeff))
        for j in range(self.d):
            polys = _gauss_poly_derivatives(self.exponents[j], self.center[j], self.sigma, beta[j])
            t = Z[..., j]
            g = np.exp(-((t - self.center[j]) ** 2) / (2 * self.sigma**2))
            out = out * polys[beta[j]](t) * g
        return out if out.ndim else complex(out)

    def __call__(self, Z):
        return self.derivative((0,) * self.d, Z)


@dataclass(frozen=True)
class InputCombination:
    """Linear combination of :class:`GaussianMonomial` inputs."""

    parts: tuple[GaussianMonomial, ...]

    @property
    def d(self) -> int:
        return self.parts[0].d

    @property
    def max_order(self) -> int:
        return min(p.max_order for p in self.parts)

    def derivative(self, beta: Sequence[int], Z):
        return sum(p.derivative(beta, Z) for p in self.parts)

    def __call__(self, Z):
        return self.derivative((0,) * self.d, Z)


def apply_polydiffop(op: PolyDiffOp, u, Z) -> np.ndarray | complex:
    """Exact value of ``(op u)(Z)`` for a closed-form input ``u``.

    Raises
    ------
    ValueError
        If the operator differentiates beyond the derivatives ``u`` carries.
    """
    if any(max(beta, default=0) > u.max_order for beta, _ in op.terms):
        raise ValueError(f"operator order {op.order} exceeds input derivatives ({u.max_order})")
    Z = np.asarray(Z, dtype=float)
    out = np.zeros(Z.shape[:-1], dtype=complex)
    for beta, poly in op.terms:
        out = out + poly(Z) * u.derivative(beta, Z)
    return out if out.ndim else complex(out)


# ---------------------------------------------------------------------------
# Rescaled operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RescaledOperator:
    """``𝓗_h`` at base point ``x0`` for a fixed ``h ∈ (0, 1]``."""

    B: MagneticField
    V: ScalarField
    x0: tuple[float, ...]
    h: float

    def __post_init__(self) -> None:
        if not 0 < self.h <= 1:
            raise ValueError(f"h must lie in (0, 1], got {self.h}")

    def potential(self, Z) -> np.ndarray:
        """``A^{(x0)}(hZ)`` (transverse gauge, quadrature)."""
        return fock_schwinger_potential(self.B, np.array(self.x0), self.h * np.asarray(Z))

    def scalar(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        return self.V(np.array(self.x0) + self.h * Z)

    def apply(self, u, Z) -> np.ndarray | complex:
        Z = np.asarray(Z, dtype=float)
        d = self.B.d
        zero = (0,) * d
        A = self.potential(Z)
        divA = self.h * fock_schwinger_divergence(self.B, np.array(self.x0), self.h * Z)
        u0 = u.derivative(zero, Z)
        out = (1j * divA + np.sum(A * A, axis=-1) + self.scalar(Z)) * u0
        for j in range(d):
            out = out - u.derivative(_unit(d, j, 2), Z)
            out = out + 2j * A[..., j] * u.derivative(_unit(d, j), Z)
        return out if np.ndim(out) else complex(out)


def rescaled_apply(B: MagneticField, V: ScalarField, x0, h: float, u, Z):
    """``(𝓗_h u)(Z)`` with the transverse potential evaluated by quadrature."""
    return RescaledOperator(B, V, tuple(np.asarray(x0, dtype=float)), float(h)).apply(u, Z)


@dataclass
class OrderCheck:
    """Observed decay order of the truncated expansion remainder."""

    m: int
    h: np.ndarray
    remainders: np.ndarray
    slope: float
    saturated: bool
    details: dict = field(default_factory=dict)


def expansion_order_check(
    B: MagneticField,
    V: ScalarField,
    x0,
    u,
    h_ladder: Sequence[float],
    m: int = 2,
    Z_samples=None,
    floor: float = 1e-13,
) -> OrderCheck:
    """Observed order of ``𝓗_h u - Σ_{r≤m} h^r H⁽ʳ⁾u`` as ``h → 0``.

    Parameters
    ----------
    B, V, x0 : problem data and base point.
    u : closed-form input (:class:`GaussianMonomial` or combination).
    h_ladder : sequence of float
        At least five values of ``h``.
    m : {0, 1, 2}
        Truncation order.
    Z_samples : array_like, shape (n, d), optional
        Evaluation points in a bounded box; the supremum over them is used.
        Defaults to a fixed set of points in ``[-1, 1]^d``.
    floor : float
        Remainders below this level are too small to resolve a slope; the
        result is then flagged ``saturated``.

    Returns
    -------
    OrderCheck
    """
    h = np.asarray(sorted(h_ladder), dtype=float)
    if h.size < 5:
        raise ValueError("the h ladder needs at least five entries")
    if m not in (0, 1, 2):
        raise ValueError(f"truncation order must be 0, 1 or 2, got {m}")
    d = B.d
    if Z_samples is None:
        rng = np.random.default_rng(12345)
        Z_samples = rng.uniform(-1.0, 1.0, size=(12, d))
    Z = np.asarray(Z_samples, dtype=float)
    model = [apply_polydiffop(model_operator(r, x0, B, V), u, Z) for r in range(m + 1)]
    rem = []
    for hv in h:
        full = rescaled_apply(B, V, x0, hv, u, Z)
        approx = sum(hv**r * model[r] for r in range(m + 1))
        rem.append(np.max(np.abs(full - approx)))
    rem = np.asarray(rem)
    saturated = bool(np.any(rem < floor))
    if saturated:
        slope = float("nan")
    else:
        slope = float(np.polyfit(np.log(h), np.log(rem), 1)[0])
    return OrderCheck(m=m, h=h, remainders=rem, slope=slope, saturated=saturated)
