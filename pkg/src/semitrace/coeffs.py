"""Analytic coefficients of the semiclassical trace expansion.

In the flat setting the first pointwise coefficients are

.. math::

    f_0(x_0) = (2\\pi)^{-d} \\int_{\\mathbb R^d} φ(|ξ|^2 + V(x_0))\\,dξ, \\qquad
    f_1(x_0) = 0,

.. math::

    f_2(x_0) = -\\tfrac{1}{12} |\\nabla V|^2 \\, F[φ'''] -
        \\tfrac{1}{6}\\Big(\\tfrac12 \\sum_{j,k} B_{kj}^2 + \\Delta V\\Big) F[φ''],
    \\qquad F[ψ] = (2\\pi)^{-d} \\int_{\\mathbb R^d} ψ(|ξ|^2 + V(x_0))\\,dξ ,

and the coefficients of the trace expansion are their integrals over the
torus.  All ``ξ``-integrals reduce to one radial integral

.. math::

    \\int_{\\mathbb R^d} g(|ξ|^2)\\,dξ = \\frac{\\pi^{d/2}}{\\Gamma(d/2)}
        \\int_0^\\infty g(t)\\,t^{d/2-1}\\,dt ,

evaluated with composite Gauss–Legendre panels refined until two
successive levels agree (the ``t^{1/2}`` kink of odd ``d`` is removed by
``t = s²``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import MagneticField, ScalarField, TestFunction, TorusDomain, sample_field

__all__ = [
    "CoefficientField",
    "radial_xi_integral",
    "xi_integral",
    "f0_pointwise",
    "f1_pointwise",
    "f2_pointwise",
    "coefficient_field",
    "trace_coefficient",
]

#: Gauss–Legendre nodes per panel.
_PANEL_NODES = 20
#: Convergence target for the panel refinement (absolute).
_RADIAL_TOL = 1e-12
_MAX_LEVELS = 12


def _sphere_factor(d: int) -> float:
    """``π^{d/2} / Γ(d/2)`` (half the area of the unit sphere ``S^{d-1}``)."""
    return math.pi ** (d / 2) / math.gamma(d / 2)


def _composite_batch(f: Callable[[np.ndarray], np.ndarray], lo: np.ndarray, hi: np.ndarray, tol: float) -> np.ndarray:
    """Integrals ``∫_{lo_i}^{hi_i} f_i`` for a batch of intervals.

    ``f`` receives node arrays of shape ``(batch, nodes)`` and must return the
    integrand at those nodes (row ``i`` belonging to interval ``i``).  The
    number of equal panels is doubled until the largest change is below
    ``tol`` (absolute, scaled by the magnitude of the result).
    """
    g, w = np.polynomial.legendre.leggauss(_PANEL_NODES)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    span = np.maximum(hi - lo, 0.0)
    prev = None
    panels = 4
    for _ in range(_MAX_LEVELS):
        edges = np.arange(panels)[:, None] + 0.5 * (g[None, :] + 1.0)  # (panels, n) in [0, panels]
        frac = (edges / panels).ravel()
        nodes = lo[:, None] + span[:, None] * frac[None, :]
        weights = np.tile(w, panels) * 0.5 / panels
        vals = f(nodes)
        est = span * (vals @ weights)
        if prev is not None:
            scale = max(1.0, float(np.max(np.abs(est), initial=0.0)))
            if np.max(np.abs(est - prev), initial=0.0) <= tol * scale:
                return est
        prev = est
        panels *= 2
    raise RuntimeError("radial quadrature did not converge")


def _radial_batch(
    g: Callable[[np.ndarray], np.ndarray], lo: np.ndarray, hi: np.ndarray, d: int, tol: float = _RADIAL_TOL
) -> np.ndarray:
    """``(π^{d/2}/Γ(d/2)) ∫_{lo}^{hi} g(t) t^{d/2-1} dt`` with ``0 ≤ lo ≤ hi``.

    ``g`` maps an array of ``t`` values of shape ``(batch, nodes)`` to the
    integrand values.
    """
    lo = np.maximum(np.asarray(lo, dtype=float), 0.0)
    hi = np.maximum(np.asarray(hi, dtype=float), lo)
    if d % 2 == 0:
        power = d // 2 - 1

        def integrand(t):
            return g(t) * t**power

        res = _composite_batch(integrand, lo, hi, tol)
    else:
        # t = s²: t^{d/2-1} dt = 2 s^{d-1} ds, smooth in s.
        def integrand(s):
            return 2.0 * g(s * s) * s ** (d - 1)

        res = _composite_batch(integrand, np.sqrt(lo), np.sqrt(hi), tol)
    return _sphere_factor(d) * res


def radial_xi_integral(g: Callable[[np.ndarray], np.ndarray], d: int, support: tuple[float, float]) -> float:
    """``∫_{ℝ^d} g(|ξ|²) dξ`` for ``g`` vanishing outside ``support``.

    Parameters
    ----------
    g : callable
        Vectorized function of ``t = |ξ|²``.
    d : int
        Dimension ``≥ 1``.
    support : (float, float)
        Interval outside which ``g`` vanishes.

    Raises
    ------
    ValueError
        If the support is unbounded above or ``d < 1``.
    """
    if d < 1:
        raise ValueError("dimension must be positive")
    lo, hi = (float(v) for v in support)
    if not (math.isfinite(hi) and math.isfinite(lo)):
        raise ValueError(f"unbounded support {support}: the radial integral needs compact support")
    if hi <= 0.0:
        return 0.0
    return float(_radial_batch(lambda t: g(t), np.array([lo]), np.array([hi]), d)[0])


def xi_integral(phi: TestFunction, k: int, shift, d: int) -> np.ndarray | float:
    """``(2π)^{-d} ∫ φ^{(k)}(|ξ|² + v) dξ`` for each shift ``v``.

    Parameters
    ----------
    phi : TestFunction
    k : int
        Derivative order of ``φ``.
    shift : float or ndarray
        Values ``v`` (typically ``V(x0)``), any shape.
    d : int
    """
    v = np.asarray(shift, dtype=float)
    flat = v.ravel()
    a, b = phi.support
    lo = a - flat
    hi = b - flat

    def g(t):
        return phi.derivative(t + flat[:, None], k)

    out = _radial_batch(g, lo, hi, d) / (2.0 * math.pi) ** d
    return float(out[0]) if v.ndim == 0 else out.reshape(v.shape)


def f0_pointwise(V: ScalarField, x0, phi: TestFunction, d: int | None = None) -> np.ndarray | float:
    """Leading coefficient ``f₀(x₀) = (2π)^{-d} ∫ φ(|ξ|² + V(x₀)) dξ``.

    ``x0`` may be a single point ``(d,)`` or an array of points ``(..., d)``.
    """
    d = V.d if d is None else d
    return xi_integral(phi, 0, V(np.asarray(x0, dtype=float)), d)


def f1_pointwise(x0=None, *args, **kwargs) -> np.ndarray | float:
    """The first-order coefficient, which vanishes identically.

    Returns ``0.0`` for a single point, or zeros shaped like the points when
    ``x0`` is an array of points ``(..., d)``.
    """
    if x0 is None:
        return 0.0
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim <= 1:
        return 0.0
    return np.zeros(x0.shape[:-1])


def _field_square_sum(B: MagneticField, x: np.ndarray) -> np.ndarray:
    """``½ Σ_{j,k} B_{kj}(x)² = Σ_{j<k} B_{jk}(x)²``."""
    total = np.zeros(x.shape[:-1])
    for comp in B.upper.values():
        total = total + np.asarray(comp(x)) ** 2
    return total


def f2_pointwise(B: MagneticField, V: ScalarField, x0, phi: TestFunction) -> np.ndarray | float:
    """Second-order coefficient ``f₂(x₀)``.

    ``-(1/12)|∇V|² F[φ'''] - (1/6)(½ΣB_{kj}² + ΔV) F[φ'']`` with
    ``F[ψ] = (2π)^{-d} ∫ ψ(|ξ|² + V(x₀)) dξ``; derivatives of ``V`` are exact.
    """
    if B.d != V.d:
        raise ValueError("field and potential dimensions differ")
    x = np.asarray(x0, dtype=float)
    d = V.d
    v = np.asarray(V(x))
    grad2 = sum(np.asarray(g(x)) ** 2 for g in V.gradient())
    lap = np.asarray(V.laplacian()(x))
    b2 = _field_square_sum(B, x)
    F3 = xi_integral(phi, 3, v, d)
    F2 = xi_integral(phi, 2, v, d)
    out = -(1.0 / 12.0) * grad2 * F3 - (1.0 / 6.0) * (b2 + lap) * F2
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class CoefficientField:
    """Pointwise coefficient ``f_r`` sampled on a uniform torus grid.

    Attributes
    ----------
    order : int
        ``r ∈ {0, 1, 2}``.
    values : ndarray, shape (N, ..., N)
    domain : TorusDomain
        Grid on which ``values`` are sampled.
    phi : TestFunction
    """

    order: int
    values: np.ndarray
    domain: TorusDomain
    phi: TestFunction

    def integral(self) -> float:
        """``∫_X f_r dv`` as grid mean times volume (spectral for periodic data)."""
        return float(np.mean(self.values) * self.domain.volume)


def coefficient_field(
    r: int, B: MagneticField, V: ScalarField, phi: TestFunction, domain: TorusDomain
) -> CoefficientField:
    """Sample ``f_r`` on the grid of ``domain``.

    Raises
    ------
    ValueError
        If ``r ∉ {0, 1, 2}`` (higher coefficients are not available in
        closed form).
    """
    x = domain.grid_points()
    if r == 0:
        vals = f0_pointwise(V, x, phi)
    elif r == 1:
        vals = f1_pointwise(x)
    elif r == 2:
        vals = f2_pointwise(B, V, x, phi)
    else:
        raise ValueError(f"coefficient order must be 0, 1 or 2, got {r}")
    return CoefficientField(r, np.asarray(vals, dtype=float), domain, phi)


def trace_coefficient(
    r: int,
    B: MagneticField,
    V: ScalarField,
    phi: TestFunction,
    domain: TorusDomain,
    grid_n: int | None = None,
) -> float:
    """Integrated coefficient ``f_r(φ) = ∫_X f_r(x) dx``.

    Parameters
    ----------
    grid_n : int, optional
        Points per axis of the coefficient grid; defaults to
        ``max(64, 8·max wavenumber)``.  ``r = 1`` returns exactly 0.
    """
    if r == 1:
        return 0.0
    if grid_n is None:
        kmax = max(B.max_wavenumber, V.max_wavenumber)
        grid_n = max(64, 8 * kmax)
        grid_n += grid_n % 2
    return coefficient_field(r, B, V, phi, domain.with_grid(grid_n)).integral()
