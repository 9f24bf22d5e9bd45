"""Helffer–Sjöstrand functional calculus for Hermitian matrices.

For a real test function ``φ`` with an almost-analytic extension ``φ̃``,

.. math::

    φ^{(k)}(H) = -\\frac{k!}{\\pi} \\int_{\\mathbb C}
        \\frac{\\partial \\tilde φ}{\\partial \\bar\\lambda}(\\lambda)\\,
        (\\lambda - H)^{-k-1}\\, d\\mu\\, d\\nu ,
    \\qquad \\lambda = \\mu + i\\nu .

This gives a route to ``φ(H)`` and ``tr φ(H)`` that never diagonalizes
``H``: only shifted linear systems are solved.

Extension
    ``φ̃(x + iy) = χ(y/δ) Σ_{k≤N} φ^{(k)}(x) (iy)^k / k!`` with a fixed smooth
    cutoff ``χ`` (1 on ``[-1/2, 1/2]``, 0 outside ``[-1, 1]``), so that
    ``∂̄φ̃ = ½[χ φ^{(N+1)} (iy)^N / N! + i χ'(y/δ)/δ · Σ_{k≤N} φ^{(k)} (iy)^k/k!]``
    vanishes like ``|y|^N`` at the real axis.

Quadrature
    Composite Gauss–Legendre panels on ``[a - δ, b + δ] × (0, δ]``; the
    lower half plane is folded in through the conjugate symmetry
    ``∂̄φ̃(λ̄) = conj ∂̄φ̃(λ)``, which makes the computed ``φ(H)`` exactly
    Hermitian: ``φ(H) = -(1/π)(S + S*)`` with ``S`` the upper-half sum.

Resolvents
    ``H`` is reduced once to a real symmetric tridiagonal ``T`` (Householder,
    a unitary similarity, not a diagonalization); each node then costs a
    pivot-free tridiagonal elimination, which is stable because every pivot
    satisfies ``|Im d| ≥ |Im λ|``.  A dense-LU route (partial pivoting at each
    node) is available for cross-checking.  Traces use the determinant
    recursion ``tr (λ - T)^{-1} = Σ_i d_i'(λ) / d_i(λ)``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .discretize import DEFAULT_DENSE_CAP, SpectralOperator, assemble_dense
from .eig import householder_tridiagonalize, real_tridiagonal_form
from .model import MAX_DERIVATIVE, TestFunction

__all__ = [
    "MAX_EXTENSION_ORDER",
    "MAX_RESOLVENT_POWER",
    "AlmostAnalyticExtension",
    "QuadratureRule",
    "build_extension",
    "cutoff",
    "cutoff_derivative",
    "hs_nodes",
    "hs_apply",
    "hs_derivative",
    "hs_trace",
    "hs_trace_matrix",
]

#: Largest Taylor depth: ``∂̄φ̃`` needs ``φ^{(N+1)}``.
MAX_EXTENSION_ORDER = MAX_DERIVATIVE - 1
#: Largest derivative order served by :func:`hs_derivative`.
MAX_RESOLVENT_POWER = 3
#: Nodes closer than this to the real axis are skipped.
AXIS_GUARD = 1e-14


# ---------------------------------------------------------------------------
# Cutoff profile
# ---------------------------------------------------------------------------


def _transition_exponent(u: np.ndarray) -> np.ndarray:
    """``e(t) = 1/(1-t) - 1/t`` with ``t = 2|u| - 1`` on the open ramp."""
    t = 2.0 * np.abs(u) - 1.0
    return 1.0 / (1.0 - t) - 1.0 / t


def cutoff(u) -> np.ndarray:
    """Smooth even cutoff: 1 on ``|u| ≤ 1/2``, 0 on ``|u| ≥ 1``.

    On the ramp ``χ = f(1-t) / (f(1-t) + f(t))`` with ``f(t) = exp(-1/t)`` and
    ``t = 2|u| - 1``, evaluated as ``(1 - tanh(e/2))/2`` where
    ``e = log f(t) - log f(1-t)``.
    """
    u = np.asarray(u, dtype=float)
    au = np.abs(u)
    out = np.where(au <= 0.5, 1.0, 0.0)
    ramp = (au > 0.5) & (au < 1.0)
    if np.any(ramp):
        e = _transition_exponent(u[ramp])
        out[ramp] = 0.5 * (1.0 - np.tanh(0.5 * e))
    return out


def cutoff_derivative(u) -> np.ndarray:
    """Closed-form ``χ'(u)``; odd in ``u`` and supported on ``1/2 < |u| < 1``.

    With ``r = f(t)/f(1-t) = exp(e)`` one has
    ``dχ/dt = -r/(1+r)² · (1/t² + 1/(1-t)²)`` and ``dt/du = 2 sign(u)``;
    ``r/(1+r)² = exp(-|e|)/(1+exp(-|e|))²`` keeps the evaluation overflow-free.
    """
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    au = np.abs(u)
    ramp = (au > 0.5) & (au < 1.0)
    if np.any(ramp):
        ur = u[ramp]
        t = 2.0 * np.abs(ur) - 1.0
        e = 1.0 / (1.0 - t) - 1.0 / t
        r = np.exp(-np.abs(e))
        dchi_dt = -(r / (1.0 + r) ** 2) * (1.0 / t**2 + 1.0 / (1.0 - t) ** 2)
        out[ramp] = dchi_dt * 2.0 * np.sign(ur)
    return out


# ---------------------------------------------------------------------------
# Almost-analytic extension
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlmostAnalyticExtension:
    """Truncated-Taylor almost-analytic extension of a test function.

    Attributes
    ----------
    phi : TestFunction
    order : int
        Taylor depth ``N``.
    delta : float
        Strip half-width; the extension vanishes for ``|Im z| ≥ δ``.
    """

    phi: TestFunction
    order: int
    delta: float

    def _taylor_sum(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        total = np.zeros(np.broadcast(x, y).shape, dtype=complex)
        iy = 1j * y
        for k in range(self.order + 1):
            total = total + self.phi.derivative(x, k) * iy**k / math.factorial(k)
        return total

    def value(self, z) -> np.ndarray:
        """``φ̃(z)``."""
        z = np.asarray(z, dtype=complex)
        x, y = z.real, z.imag
        return cutoff(y / self.delta) * self._taylor_sum(x, y)

    __call__ = value

    def dbar(self, z) -> np.ndarray:
        """``∂φ̃/∂λ̄ = ½(∂_x + i∂_y) φ̃`` in closed form."""
        z = np.asarray(z, dtype=complex)
        x, y = z.real, z.imag
        N = self.order
        u = y / self.delta
        top = self.phi.derivative(x, N + 1) * (1j * y) ** N / math.factorial(N)
        out = cutoff(u) * top
        dchi = cutoff_derivative(u)
        ramp = dchi != 0.0
        if np.any(ramp):
            edge = np.zeros_like(out)
            edge[ramp] = 1j * dchi[ramp] / self.delta * self._taylor_sum(x[ramp], y[ramp])
            out = out + edge
        return 0.5 * out


def build_extension(phi: TestFunction, N: int = MAX_EXTENSION_ORDER, delta: float | None = None) -> AlmostAnalyticExtension:
    """Almost-analytic extension of depth ``N`` on a strip of half-width ``δ``.

    Parameters
    ----------
    phi : TestFunction
    N : int
        Taylor depth, ``0 ≤ N ≤ 4``.
    delta : float, optional
        Strip half-width; defaults to one tenth of the support half-length.

    Raises
    ------
    ValueError
        If ``N`` exceeds the available derivative budget or ``δ ≤ 0``.
    """
    if not 0 <= N <= MAX_EXTENSION_ORDER:
        raise ValueError(
            f"extension order N={N} needs φ^(N+1); only derivatives up to {MAX_DERIVATIVE} exist"
        )
    if delta is None:
        delta = 0.1 * phi.width
    if not delta > 0:
        raise ValueError(f"strip half-width must be positive, got {delta}")
    return AlmostAnalyticExtension(phi, int(N), float(delta))


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Upper-half-plane nodes with the ``∂̄φ̃``-weighted coefficients.

    Attributes
    ----------
    nodes : ndarray of complex
        Quadrature nodes with ``Im z > 0``.
    coefficients : ndarray of complex
        ``w_q · ∂̄φ̃(z_q)``; nodes where this vanishes are dropped.
    skipped : int
        Nodes discarded because ``|Im z| < 1e-14``.
    total : int
        Size of the underlying tensor rule (upper half only).
    """

    nodes: np.ndarray
    coefficients: np.ndarray
    skipped: int
    total: int

    def __len__(self) -> int:
        return self.nodes.size


def _panels(lo: float, hi: float, count: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    g, w = np.polynomial.legendre.leggauss(n)
    edges = np.linspace(lo, hi, count + 1)
    xs, ws = [], []
    for left, right in zip(edges[:-1], edges[1:]):
        half = 0.5 * (right - left)
        xs.append(left + half * (g + 1.0))
        ws.append(half * w)
    return np.concatenate(xs), np.concatenate(ws)


def hs_nodes(ext: AlmostAnalyticExtension, quad_n: int = 60, panel_width: float | None = None) -> QuadratureRule:
    """Composite Gauss–Legendre rule for the area integral.

    The x-range ``[a - δ, b + δ]`` is split into panels of width at most
    ``panel_width`` (default ``δ/2``) carrying ``quad_n`` nodes each; the
    y-range ``(0, δ]`` into the two panels ``(0, δ/2]`` (pure Taylor
    remainder) and ``[δ/2, δ]`` (cutoff ramp) carrying ``⌈quad_n/2⌉`` nodes
    each.  The integrand varies fastest along x (the resolvent's pole sits on
    the real axis), so x gets the finer resolution.
    """
    if quad_n < 2:
        raise ValueError("quad_n must be at least 2")
    a, b = ext.phi.support
    delta = ext.delta
    lo, hi = a - delta, b + delta
    width = 0.5 * delta if panel_width is None else float(panel_width)
    count = max(1, math.ceil((hi - lo) / width - 1e-12))
    x, wx = _panels(lo, hi, count, quad_n)
    y, wy = _panels(0.0, delta, 2, max(2, -(-quad_n // 2)))
    X, Y = np.meshgrid(x, y, indexing="ij")
    W = np.outer(wx, wy)
    Z = (X + 1j * Y).ravel()
    W = W.ravel()
    total = Z.size
    keep = np.abs(Z.imag) >= AXIS_GUARD
    skipped = int(total - np.count_nonzero(keep))
    Z, W = Z[keep], W[keep]
    coef = W * ext.dbar(Z)
    nz = coef != 0
    return QuadratureRule(Z[nz], coef[nz], skipped, total)


# ---------------------------------------------------------------------------
# Resolvent kernels
# ---------------------------------------------------------------------------


def _jet_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of truncated Taylor series (leading axis = coefficient index)."""
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=complex)
    for m in range(out.shape[0]):
        for i in range(m + 1):
            out[m] += a[i] * b[m - i]
    return out


def _jet_recip(a: np.ndarray) -> np.ndarray:
    """Reciprocal of a truncated Taylor series with invertible constant term."""
    out = np.empty_like(a)
    out[0] = 1.0 / a[0]
    for m in range(1, a.shape[0]):
        acc = a[1] * out[m - 1]
        for i in range(2, m + 1):
            acc = acc + a[i] * out[m - i]
        out[m] = -acc * out[0]
    return out


def _resolvent_jets(z: np.ndarray, diag: np.ndarray, off: np.ndarray, order: int):
    """Pivot data of ``(z - T)^{-1}`` as Taylor jets in ``z``.

    Returns ``(ratios, gdiag)`` of shape ``(order + 1, q, n)``: the
    elimination ratios ``b_i / d_i`` (forward pivots ``d_i``) and the
    diagonal ``G_ii = 1 / (d_i + e_i - (z - a_i))`` (backward pivots
    ``e_i``).  Every pivot has imaginary part at least ``Im z`` in modulus,
    so no pivoting is needed.
    """
    n, K = diag.size, order
    zj = np.zeros((K + 1, z.size), dtype=complex)
    zj[0] = z
    if K:
        zj[1] = 1.0
    off2 = off * off
    inv_d = np.empty((K + 1, z.size, n), dtype=complex)
    inv_e = np.empty_like(inv_d)
    d = zj.copy()
    d[0] -= diag[0]
    inv_d[:, :, 0] = _jet_recip(d)
    for i in range(1, n):
        d = zj - off2[i - 1] * inv_d[:, :, i - 1]
        d[0] -= diag[i]
        inv_d[:, :, i] = _jet_recip(d)
    e = zj.copy()
    e[0] -= diag[n - 1]
    inv_e[:, :, n - 1] = _jet_recip(e)
    for i in range(n - 2, -1, -1):
        e = zj - off2[i] * inv_e[:, :, i + 1]
        e[0] -= diag[i]
        inv_e[:, :, i] = _jet_recip(e)
    # d_i + e_i - (z - a_i) = (z - a_i) - b_{i-1}²/d_{i-1} - b_i²/e_{i+1}
    s = np.broadcast_to(zj[:, :, None], inv_d.shape).copy()
    s[0] -= diag[None, :]
    s[:, :, 1:] -= off2[None, None, :] * inv_d[:, :, :-1]
    s[:, :, :-1] -= off2[None, None, :] * inv_e[:, :, 1:]
    gdiag = _jet_recip(s)
    ratios = np.zeros_like(inv_d)
    ratios[:, :, :-1] = off[None, None, :] * inv_d[:, :, :-1]
    return ratios, gdiag


def _resolvent_power_block(z: np.ndarray, c: np.ndarray, diag: np.ndarray, off: np.ndarray, power: int) -> np.ndarray:
    """``Σ_q c_q (z_q - T)^{-power}`` for one block of nodes.

    The resolvent ``G = (z - T)^{-1}`` of a real symmetric tridiagonal ``T``
    is complex symmetric with ``G_ij = (b_i / d_i) G_{i+1,j}`` above the
    diagonal, so its rows are generated bottom-up from ``G_ii``.  Carrying
    every quantity as a Taylor jet in ``z`` of length ``power`` yields
    ``∂_z^k G / k! = (-1)^k (z - T)^{-k-1}`` from the same sweep.
    """
    n, K = diag.size, power - 1
    ratios, gdiag = _resolvent_jets(z, diag, off, K)
    rows = np.zeros((K + 1, z.size, n), dtype=complex)
    upper = np.zeros((n, n), dtype=complex)
    for i in range(n - 1, -1, -1):
        tail = rows[:, :, i + 1 :]
        r = ratios[:, :, i, None]
        for m in range(K, -1, -1):  # in place: higher orders read lower ones first
            acc = r[0] * tail[m]
            for j in range(1, m + 1):
                acc += r[j] * tail[m - j]
            tail[m] = acc
        rows[:, :, i] = gdiag[:, :, i]
        upper[i, i:] = c @ rows[K, :, i:]
    total = upper + upper.T - np.diag(np.diag(upper))
    return total if K % 2 == 0 else -total


def _resolvent_power_sum(rule_z, rule_c, diag, off, power, chunk, workers) -> np.ndarray:
    """``Σ_q c_q (z_q - T)^{-power}`` with a fixed, ordered chunk reduction."""
    n = diag.size
    starts = list(range(0, rule_z.size, chunk))

    def work(start: int) -> np.ndarray:
        sl = slice(start, start + chunk)
        return _resolvent_power_block(rule_z[sl], rule_c[sl], diag, off, power)

    parts = _map(work, starts, workers)
    return _ordered_sum(parts, (n, n))


def _dense_power_sum(rule_z, rule_c, H, power, chunk, workers) -> np.ndarray:
    """Same sum with a pivoted dense LU solve at every node."""
    n = H.shape[0]
    eye = np.eye(n, dtype=complex)
    starts = list(range(0, rule_z.size, chunk))

    def work(start: int) -> np.ndarray:
        z = rule_z[start : start + chunk]
        c = rule_c[start : start + chunk]
        shifted = z[:, None, None] * eye - H[None, :, :]
        X = np.broadcast_to(eye, shifted.shape)
        for _ in range(power):
            X = np.linalg.solve(shifted, X)
        return np.einsum("q,qij->ij", c, X)

    parts = _map(work, starts, workers)
    return _ordered_sum(parts, (n, n))


def _map(fn, items, workers: int):
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _ordered_sum(parts, shape):
    """Pairwise reduction in a fixed tree order (reproducible across runs)."""
    if not parts:
        return np.zeros(shape, dtype=complex)
    parts = list(parts)
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _as_hermitian_matrix(H) -> np.ndarray:
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    H = H.astype(complex)
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    if np.max(np.abs(H - H.conj().T), initial=0.0) > 1e-10 * scale:
        raise ValueError("matrix is not Hermitian")
    return 0.5 * (H + H.conj().T)


def _warn_skipped(rule: QuadratureRule) -> None:
    if rule.skipped:
        warnings.warn(f"{rule.skipped} quadrature nodes on the real axis were skipped", RuntimeWarning, stacklevel=3)


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def hs_derivative(
    phi: TestFunction,
    H,
    k: int = 0,
    N: int = MAX_EXTENSION_ORDER,
    delta: float | None = None,
    quad_n: int = 60,
    *,
    method: str = "tridiagonal",
    panel_width: float | None = None,
    chunk: int = 4096,
    workers: int = 1,
) -> np.ndarray:
    """``φ^{(k)}(H)`` from the resolvent integral with ``(λ - H)^{-k-1}``.

    Parameters
    ----------
    phi : TestFunction
    H : (n, n) array_like
        Hermitian matrix.
    k : int
        Derivative order, ``0 ≤ k ≤ 3``.
    N, delta, quad_n, panel_width
        Extension depth, strip half-width, and Gauss–Legendre nodes per
        panel (see :func:`build_extension`, :func:`hs_nodes`).
    method : {"tridiagonal", "dense_lu"}
        Resolvent engine.
    chunk, workers
        Nodes per batch and worker threads; the reduction order is fixed.

    Raises
    ------
    ValueError
        If ``k`` is out of range, ``H`` is not Hermitian, or ``N ≤ k``: the
        integrand ``∂̄φ̃ · (λ - H)^{-k-1}`` is ``O(|Im λ|^{N-k-1})`` and is
        only integrable up to the real axis when ``N ≥ k + 1``.
    """
    if not 0 <= k <= MAX_RESOLVENT_POWER:
        raise ValueError(f"derivative order k must be in [0, {MAX_RESOLVENT_POWER}], got {k}")
    if N < k + 1:
        raise ValueError(f"derivative order k={k} needs extension order N >= {k + 1}, got N={N}")
    H = _as_hermitian_matrix(H)
    ext = build_extension(phi, N, delta)
    rule = hs_nodes(ext, quad_n, panel_width)
    _warn_skipped(rule)
    n = H.shape[0]
    if n == 0:
        return np.zeros((0, 0), dtype=complex)
    if method == "tridiagonal":
        diag, off_c, Q = householder_tridiagonalize(H, want_q=True)
        off, phases = real_tridiagonal_form(off_c)
        S = _resolvent_power_sum(rule.nodes, rule.coefficients, diag, off, k + 1, chunk, workers)
        U = Q * phases[None, :]
        S = U @ S @ U.conj().T
    elif method == "dense_lu":
        S = _dense_power_sum(rule.nodes, rule.coefficients, H, k + 1, max(1, min(chunk, 512) // 4), workers)
    else:
        raise ValueError(f"unknown resolvent method {method!r}")
    return -(math.factorial(k) / math.pi) * (S + S.conj().T)


def hs_apply(
    phi: TestFunction,
    H,
    N: int = MAX_EXTENSION_ORDER,
    delta: float | None = None,
    quad_n: int = 60,
    **kwargs,
) -> np.ndarray:
    """``φ(H) = -(1/π) ∫ ∂̄φ̃(λ) (λ - H)^{-1} dμ dν`` for a Hermitian ``H``.

    Identical to :func:`hs_derivative` with ``k = 0`` (same nodes).
    """
    return hs_derivative(phi, H, 0, N, delta, quad_n, **kwargs)


def _tridiagonal_trace_sum(z: np.ndarray, c: np.ndarray, diag: np.ndarray, off: np.ndarray) -> complex:
    """``Σ_q c_q tr (z_q - T)^{-1}`` via the pivot/derivative recursion.

    The pivots ``d_i = z - a_i - b_{i-1}²/d_{i-1}`` satisfy
    ``det(z - T) = Π d_i``, so ``tr (z - T)^{-1} = Σ_i d_i'/d_i`` with
    ``d_i' = 1 + (b_{i-1}/d_{i-1})² d_{i-1}'``.
    """
    piv = z - diag[0]
    dpiv = np.ones_like(z)
    acc = dpiv / piv
    off2 = off * off
    for i in range(1, diag.size):
        inv = 1.0 / piv
        dpiv = 1.0 + off2[i - 1] * (inv * inv) * dpiv
        piv = z - diag[i] - off2[i - 1] * inv
        acc = acc + dpiv / piv
    return complex(np.dot(c, acc))


def hs_trace_matrix(
    phi: TestFunction,
    H,
    N: int = MAX_EXTENSION_ORDER,
    delta: float | None = None,
    quad_n: int = 60,
    *,
    panel_width: float | None = None,
    chunk: int = 8192,
    workers: int = 1,
    return_imag: bool = False,
):
    """``tr φ(H)`` for a dense Hermitian matrix without forming ``φ(H)``.

    The reduction to tridiagonal form uses LAPACK ``zhetrd`` (real
    off-diagonal); the trace of each resolvent comes from the pivot
    recursion.  Upper- and lower-half-plane nodes are summed explicitly so
    the imaginary part of the result is a genuine accuracy diagnostic.

    Returns
    -------
    float or (float, float)
        The trace, plus its imaginary residue if ``return_imag``.
    """
    H = _as_hermitian_matrix(H)
    ext = build_extension(phi, N, delta)
    rule = hs_nodes(ext, quad_n, panel_width)
    _warn_skipped(rule)
    n = H.shape[0]
    if n == 0:
        return (0.0, 0.0) if return_imag else 0.0
    lwork = int(np.real(lapack.zhetrd_lwork(n, lower=1)[0]))
    _, diag, off, _, info = lapack.zhetrd(H, lower=1, lwork=max(lwork, 1))
    if info != 0:
        raise RuntimeError(f"zhetrd failed with info={info}")
    diag = np.asarray(diag, dtype=float)
    off = np.asarray(off, dtype=float)
    z_all = np.concatenate([rule.nodes, rule.nodes.conj()])
    c_all = np.concatenate([rule.coefficients, rule.coefficients.conj()])
    starts = list(range(0, z_all.size, chunk))

    def work(start: int) -> complex:
        return _tridiagonal_trace_sum(z_all[start : start + chunk], c_all[start : start + chunk], diag, off)

    parts = [np.array(p) for p in _map(work, starts, workers)]
    total = complex(_ordered_sum(parts, ())) * (-1.0 / math.pi)
    if return_imag:
        return total.real, total.imag
    return total.real


def hs_trace(
    phi: TestFunction,
    op: SpectralOperator,
    N: int = MAX_EXTENSION_ORDER,
    delta: float | None = None,
    quad_n: int = 60,
    *,
    cap: int = DEFAULT_DENSE_CAP,
    imag_tol: float = 1e-8,
    **kwargs,
) -> float:
    """``tr φ(H_p)`` for a discretized operator via the resolvent integral.

    Raises
    ------
    ValueError
        If the dense dimension exceeds ``cap``.
    RuntimeError
        If the imaginary residue exceeds ``imag_tol·max(|trace|, 1)``.
    """
    if op.size > cap:
        raise ValueError(f"dense dimension {op.size} exceeds the cap {cap}")
    M = assemble_dense(op, cap=cap)
    value, imag = hs_trace_matrix(phi, M, N, delta, quad_n, return_imag=True, **kwargs)
    if abs(imag) > imag_tol * max(abs(value), 1.0):
        raise RuntimeError(f"trace has imaginary residue {imag:.3e} (value {value:.6e})")
    return value
