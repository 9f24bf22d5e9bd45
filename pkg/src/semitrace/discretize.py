"""Fourier-spectral discretization of the magnetic Schrödinger operator.

On the flat torus with semiclassical parameter ``h = 1/p`` the operator is

.. math::

    H_p = \\sum_j (D_j - A_j)^* (D_j - A_j) + V, \\qquad D_j = \\frac{h}{i}\\partial_j .

``D_j`` acts as the exact Fourier multiplier ``h·2πk_j/L_j`` (the Nyquist
symbol is kept real), ``A_j`` and ``V`` act pointwise on the grid.  Both
factors are Hermitian on the grid, so the factorized form is Hermitian to
round-off independently of aliasing.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .model import MagneticField, ScalarField, TorusDomain, VectorPotential, sample_field

__all__ = [
    "DEFAULT_DENSE_CAP",
    "SpectralOperator",
    "build_operator",
    "apply",
    "assemble_dense",
    "export_dense",
    "load_dense",
    "grid_size_rule",
    "prolong",
    "fourier_symbols",
]

#: Largest matrix dimension assembled densely unless configured otherwise.
DEFAULT_DENSE_CAP = 4096

_HEADER = struct.Struct("<QQ")


def fourier_symbols(domain: TorusDomain, p: float) -> list[np.ndarray]:
    """Per-axis symbols ``h·2πk/L`` in FFT ordering (Nyquist at ``-N/2``)."""
    n = domain.grid_n
    k = np.fft.fftfreq(n, d=1.0 / n)
    return [(1.0 / p) * 2.0 * math.pi * k / L for L in domain.periods]


@dataclass
class SpectralOperator:
    """Discretized ``H_p`` with matrix-free application.

    Attributes
    ----------
    p : float
        Semiclassical parameter (``h = 1/p``).
    domain : TorusDomain
    A : VectorPotential
    V : ScalarField
    A_grid : ndarray, shape (d, N, ..., N)
    V_grid : ndarray, shape (N, ..., N)
    workers : int
        Threads handed to the FFT backend.
    """

    p: float
    domain: TorusDomain
    A: VectorPotential
    V: ScalarField
    A_grid: np.ndarray
    V_grid: np.ndarray
    symbols: list[np.ndarray] = field(repr=False)
    workers: int = 1

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def shape(self) -> tuple[int, ...]:
        return self.domain.shape

    @property
    def size(self) -> int:
        return self.domain.size

    def _multiplier(self, j: int) -> np.ndarray:
        shape = [1] * self.d
        shape[j] = self.domain.grid_n
        return self.symbols[j].reshape(shape)

    def _D(self, u: np.ndarray, j: int) -> np.ndarray:
        axes = tuple(range(-self.d, 0))
        uh = sfft.fftn(u, axes=axes, workers=self.workers)
        uh *= self._multiplier(j)
        return sfft.ifftn(uh, axes=axes, workers=self.workers)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``H_p u`` for ``u`` of shape ``(..., M)`` or ``(..., N, ..., N)``.

        Leading axes are treated as a batch.
        """
        u = np.asarray(u)
        flat = u.shape[-1] == self.size and (u.ndim == 1 or u.shape[-self.d :] != self.shape)
        if flat:
            batch = u.shape[:-1]
            grid = u.reshape(batch + self.shape)
        elif u.shape[-self.d :] == self.shape:
            batch = u.shape[: -self.d]
            grid = u
        else:
            raise ValueError(f"shape {u.shape} does not match grid {self.shape}")
        grid = grid.astype(complex, copy=False)
        out = self.V_grid * grid
        for j in range(self.d):
            w = self._D(grid, j) - self.A_grid[j] * grid
            out = out + self._D(w, j) - self.A_grid[j] * w
        return out.reshape(batch + (self.size,)) if flat else out

    __matmul__ = apply

    def apply_columns(self, X: np.ndarray) -> np.ndarray:
        """Apply the operator to every column of an ``(M, k)`` array."""
        return self.apply(np.asarray(X).T).T

    def quadratic_form(self, u: np.ndarray, v: np.ndarray) -> complex:
        """Discrete ``⟨H u, v⟩`` with the plain Euclidean inner product."""
        return complex(np.vdot(self.apply(u).ravel(), np.asarray(v).ravel()))


def build_operator(
    domain: TorusDomain,
    A: VectorPotential | MagneticField | None,
    V: ScalarField | None,
    p: float,
    workers: int = 1,
) -> SpectralOperator:
    """Assemble the matrix-free operator ``H_p`` on ``domain``.

    Parameters
    ----------
    domain : TorusDomain
    A : VectorPotential, MagneticField or None
        Either a periodic potential or a flux-free field from which a
        Coulomb-gauge potential is built.  ``None`` means ``A = 0``.
    V : ScalarField or None
        Scalar potential, ``None`` means ``V = 0``.
    p : float
        Positive semiclassical parameter.

    Raises
    ------
    ValueError
        If the field carries flux, ``p <= 0``, or the grid cannot represent
        the products formed by the operator (``grid_n < 4·max |k|``).
    """
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    if A is None:
        A = VectorPotential.zero(domain.d, domain.periods)
    elif isinstance(A, MagneticField):
        if not A.is_flux_free():
            raise ValueError(f"flux must vanish on the torus: {A.flux()}")
        A = VectorPotential.from_field(A)
    if V is None:
        V = ScalarField.zero(domain.periods)
    if A.d != domain.d or V.d != domain.d:
        raise ValueError("field dimension does not match the domain")
    kmax = max(A.max_wavenumber, V.max_wavenumber)
    if domain.grid_n < 4 * kmax:
        raise ValueError(
            f"grid_n={domain.grid_n} cannot resolve field modes up to {kmax} "
            f"(alias guard requires grid_n >= {4 * kmax})"
        )
    A_grid = np.stack([sample_field(c, domain) for c in A.components])
    V_grid = sample_field(V, domain)
    return SpectralOperator(
        p=float(p),
        domain=domain,
        A=A,
        V=V,
        A_grid=A_grid,
        V_grid=V_grid,
        symbols=fourier_symbols(domain, p),
        workers=int(workers),
    )


def apply(op: SpectralOperator, u: np.ndarray) -> np.ndarray:
    """Functional form of :meth:`SpectralOperator.apply`."""
    return op.apply(u)


def assemble_dense(op: SpectralOperator, cap: int = DEFAULT_DENSE_CAP, batch: int = 256) -> np.ndarray:
    """Dense matrix whose column ``j`` is ``H_p e_j``.

    Raises
    ------
    ValueError
        If the dimension exceeds ``cap``.
    """
    n = op.size
    if n > cap:
        raise ValueError(f"dense dimension {n} exceeds the cap {cap}")
    M = np.empty((n, n), dtype=complex)
    for start in range(0, n, batch):
        stop = min(start + batch, n)
        E = np.zeros((stop - start, n), dtype=complex)
        E[np.arange(stop - start), np.arange(start, stop)] = 1.0
        M[:, start:stop] = op.apply(E).T
    return M


def export_dense(M: np.ndarray, path: str | Path) -> None:
    """Write ``M`` as little-endian row-major complex128 behind a dims header.

    The 16-byte header holds the two dimensions as unsigned 64-bit integers.
    """
    M = np.ascontiguousarray(M, dtype="<c16")
    if M.ndim != 2:
        raise ValueError("only matrices can be exported")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*M.shape))
        fh.write(M.tobytes(order="C"))


def load_dense(path: str | Path) -> np.ndarray:
    """Inverse of :func:`export_dense`."""
    with open(path, "rb") as fh:
        rows, cols = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != rows * cols:
        raise ValueError(f"file holds {data.size} entries, header says {rows}x{cols}")
    return data.reshape(rows, cols).astype(complex)


def grid_size_rule(
    p: float,
    periods,
    e_max: float,
    kmax: int = 0,
    c: float = 1.5,
    multiple: int = 4,
    minimum: int = 8,
) -> int:
    """Grid points per axis for eigenfunctions with energy up to ``e_max``.

    ``grid_n >= max(4·kmax, ceil(c·p·L·sqrt(e_max)/π))`` rounded up to a
    multiple of ``multiple`` (which keeps coarse sample points such as
    ``L/4`` on the grid for every ``p``).  Never below 8, the smallest grid
    a :class:`~semitrace.model.TorusDomain` accepts.
    """
    L = max(periods)
    need = max(4 * kmax, math.ceil(c * p * L * math.sqrt(max(e_max, 0.0)) / math.pi), minimum, 8)
    return int(-(-need // multiple) * multiple)


def _padded_index(n: int, m: int) -> tuple[np.ndarray, int]:
    """Positions of the ``n`` coarse FFT frequencies inside an ``m`` grid."""
    half = n // 2
    freq = np.fft.fftfreq(n, d=1.0 / n).astype(int)  # Nyquist listed as -n/2
    return np.mod(freq, m), half


def prolong(u: np.ndarray, coarse: TorusDomain, fine_n: int) -> np.ndarray:
    """Isometric Fourier prolongation from ``coarse`` to a finer grid.

    Vectors are interpreted with the discrete ``L²`` norm
    ``Σ|u_m|²·cell``; the Nyquist coefficient of every axis is split
    equally (factor ``1/√2``) between ``±N/2`` so the map is an exact
    isometry.

    Parameters
    ----------
    u : ndarray, shape (..., N**d)
    coarse : TorusDomain
    fine_n : int
        Even fine grid size ``>= N``.

    Returns
    -------
    ndarray, shape (..., fine_n**d)
    """
    n, d = coarse.grid_n, coarse.d
    if fine_n < n or fine_n % 2:
        raise ValueError("fine grid must be even and at least as fine as the coarse grid")
    batch = u.shape[:-1]
    grid = u.reshape(batch + coarse.shape)
    axes = tuple(range(-d, 0))
    uh = np.fft.fftn(grid, axes=axes, norm="ortho")
    if fine_n == n:
        out = uh
    else:
        pos, half = _padded_index(n, fine_n)
        out = np.zeros(batch + (fine_n,) * d, dtype=complex)
        # Split the Nyquist plane along each axis: coefficient at -n/2 goes to
        # both -n/2 and +n/2 with weight 1/sqrt(2).
        src = uh
        idx_lists = []
        for _ in range(d):
            idx_lists.append(pos)
        out[(Ellipsis,) + np.ix_(*idx_lists)] = src
        for ax in range(d):
            axis = ax - d
            nyq_neg = fine_n - half  # position of -n/2 on the fine grid
            sl_neg = [slice(None)] * out.ndim
            sl_pos = [slice(None)] * out.ndim
            sl_neg[axis] = nyq_neg
            sl_pos[axis] = half
            plane = out[tuple(sl_neg)] / math.sqrt(2.0)
            out[tuple(sl_neg)] = plane
            out[tuple(sl_pos)] = plane
    # orthonormal FFT scaling on the fine grid; grid values differ by the
    # ratio of cell volumes so that Σ|u|²·cell is preserved.
    vals = np.fft.ifftn(out, axes=axes, norm="ortho") * (fine_n / n) ** (d / 2)
    return vals.reshape(batch + (fine_n**d,))
