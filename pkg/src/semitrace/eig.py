"""Hermitian eigensolvers and spectral windows.

Two dense engines share one contract:

* ``"householder_ql"`` — in-repo Householder reduction to a Hermitian
  tridiagonal matrix, a diagonal unitary scaling to a real symmetric
  tridiagonal, and implicit-shift QL iterations (with optional
  accumulation of the rotations).
* ``"lapack"`` — the same mathematical pipeline as implemented by LAPACK
  (``zheevr``: Householder reduction plus MRRR), used for large matrices.

The matrix-free path is a block Lanczos method with full
reorthogonalization.  Converged eigenvectors are deflated and the process is
restarted from a fresh random block until a pass finds nothing new inside
the window, which recovers multiplicities larger than the block size.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .discretize import SpectralOperator, assemble_dense
from .model import TorusDomain

__all__ = [
    "EigenWindow",
    "DenseEig",
    "LanczosFailure",
    "householder_tridiagonalize",
    "real_tridiagonal_form",
    "tridiagonal_ql",
    "dense_hermitian_eig",
    "dense_window",
    "lanczos_window",
    "eigenfunction_values",
    "export_eigenvalues_csv",
    "clusters",
]

#: Matrices up to this size use the in-repo engine under ``backend="auto"``.
AUTO_INREPO_MAX = 192


class LanczosFailure(RuntimeError):
    """Lanczos did not certify the window within the iteration budget."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# Dense engine
# ---------------------------------------------------------------------------


def householder_tridiagonalize(M: np.ndarray, want_q: bool = True):
    """Unitary reduction ``M = Q T Q*`` with ``T`` Hermitian tridiagonal.

    Returns
    -------
    diag : ndarray of float, shape (n,)
    offdiag : ndarray of complex, shape (n-1,)
        Subdiagonal ``T[k+1, k]``.
    Q : ndarray or None
    """
    A = np.array(M, dtype=complex, copy=True)
    n = A.shape[0]
    Q = np.eye(n, dtype=complex) if want_q else None
    for k in range(n - 2):
        x = A[k + 1 :, k].copy()
        xnorm = np.linalg.norm(x)
        if xnorm == 0.0:
            continue
        phase = x[0] / abs(x[0]) if x[0] != 0 else 1.0
        alpha = -phase * xnorm
        v = x
        v[0] -= alpha
        vnorm = np.linalg.norm(v)
        if vnorm == 0.0:
            continue
        v /= vnorm
        # Two-sided update of the trailing block with H = I - 2 v v*.
        sub = A[k + 1 :, k + 1 :]
        p = sub @ v
        K = np.vdot(v, p).real
        w = p - K * v
        sub -= 2.0 * (np.outer(v, w.conj()) + np.outer(w, v.conj()))
        A[k + 1 :, k] = 0.0
        A[k, k + 1 :] = 0.0
        A[k + 1, k] = alpha
        A[k, k + 1] = np.conj(alpha)
        if Q is not None:
            Qs = Q[:, k + 1 :]
            Qs -= 2.0 * np.outer(Qs @ v, v.conj())
    diag = np.real(np.diag(A)).copy()
    offdiag = np.diag(A, -1).copy()
    return diag, offdiag, Q


def real_tridiagonal_form(offdiag: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Phases ``D`` with ``T = D T_r D*`` and ``T_r`` real symmetric.

    Returns the nonnegative off-diagonal of ``T_r`` and the diagonal of ``D``.
    """
    n = offdiag.size + 1
    phases = np.ones(n, dtype=complex)
    mags = np.abs(offdiag)
    for k, e in enumerate(offdiag):
        phases[k + 1] = phases[k] * (e / mags[k] if mags[k] > 0 else 1.0)
    return mags, phases


def tridiagonal_ql(diag, offdiag, Z: np.ndarray | None = None, max_sweeps: int = 60):
    """Implicit-shift QL iteration for a real symmetric tridiagonal matrix.

    Parameters
    ----------
    diag : array_like, shape (n,)
    offdiag : array_like, shape (n-1,)
        Sub-diagonal entries.
    Z : ndarray, shape (m, n), optional
        Updated in place with the accumulated rotations; pass the identity to
        obtain eigenvectors of the tridiagonal matrix itself.

    Returns
    -------
    ndarray
        Unsorted eigenvalues (sort together with the columns of ``Z``).
    """
    d = np.array(diag, dtype=float, copy=True)
    n = d.size
    e = np.zeros(n)
    e[: n - 1] = offdiag
    for l in range(n):
        iters = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= np.finfo(float).eps * dd:
                    break
                m += 1
            if m == l:
                break
            iters += 1
            if iters > max_sweeps:
                raise np.linalg.LinAlgError("QL iteration did not converge")
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            i = m - 1
            underflow = False
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                if Z is not None:
                    zi1 = Z[:, i + 1].copy()
                    Z[:, i + 1] = s * Z[:, i] + c * zi1
                    Z[:, i] = c * Z[:, i] - s * zi1
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return d


@dataclass
class DenseEig:
    """All eigenpairs of a dense Hermitian matrix, ascending."""

    values: np.ndarray
    vectors: np.ndarray | None
    backend: str


def _check_hermitian(M: np.ndarray, tol: float = 1e-10) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    defect = float(np.max(np.abs(M - M.conj().T))) if M.size else 0.0
    if defect > tol * scale:
        raise ValueError(f"matrix is not Hermitian (defect {defect:.3e})")


def dense_hermitian_eig(M: np.ndarray, vectors: bool = True, backend: str = "auto") -> DenseEig:
    """Eigen-decomposition of a Hermitian matrix.

    Parameters
    ----------
    M : ndarray, shape (n, n)
        Hermitian to within ``1e-10`` relative.
    vectors : bool
        Whether to compute eigenvectors.
    backend : {"auto", "householder_ql", "lapack"}
        ``"auto"`` uses the in-repo engine up to ``AUTO_INREPO_MAX`` and
        LAPACK above.

    Returns
    -------
    DenseEig
    """
    M = np.asarray(M)
    _check_hermitian(M)
    n = M.shape[0]
    if backend == "auto":
        backend = "householder_ql" if n <= AUTO_INREPO_MAX else "lapack"
    if backend == "lapack":
        if vectors:
            w, V = sla.eigh(M, driver="evr")
            return DenseEig(w, V, backend)
        return DenseEig(sla.eigh(M, eigvals_only=True, driver="evr"), None, backend)
    if backend != "householder_ql":
        raise ValueError(f"unknown backend {backend!r}")
    if n == 0:
        return DenseEig(np.zeros(0), np.zeros((0, 0), complex) if vectors else None, backend)
    diag, off, Q = householder_tridiagonalize(M, want_q=vectors)
    mags, phases = real_tridiagonal_form(off)
    Z = np.eye(n) if vectors else None
    w = tridiagonal_ql(diag, mags, Z)
    order = np.argsort(w, kind="stable")
    w = w[order]
    if not vectors:
        return DenseEig(w, None, backend)
    V = (Q * phases[None, :]) @ Z[:, order]
    return DenseEig(w, V, backend)


# ---------------------------------------------------------------------------
# Spectral windows
# ---------------------------------------------------------------------------


@dataclass
class EigenWindow:
    """Eigenpairs of an operator inside ``[a, b]``.

    Eigenvectors, when present, are stored as columns normalized in the
    discrete ``L²`` norm ``Σ|u_m|²·cell = 1``.
    """

    window: tuple[float, float]
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None
    residuals: np.ndarray | None = None
    domain: TorusDomain | None = None
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def count(self) -> int:
        return len(self)

    def euclidean_vectors(self) -> np.ndarray:
        """Eigenvectors rescaled to unit Euclidean norm."""
        if self.eigenvectors is None:
            raise ValueError("eigenvectors were not computed")
        return self.eigenvectors * math.sqrt(self.domain.cell_volume)


def _as_window(values, vectors, window, domain, residuals=None, info=None) -> EigenWindow:
    a, b = window
    mask = (values >= a) & (values <= b)
    vecs = None
    if vectors is not None:
        vecs = vectors[:, mask] / math.sqrt(domain.cell_volume) if domain else vectors[:, mask]
    res = residuals[mask] if residuals is not None else None
    return EigenWindow((a, b), values[mask], vecs, res, domain, info or {})


def _residual_norms(apply: Callable, values: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    if vectors.shape[1] == 0:
        return np.zeros(0)
    R = apply(vectors) - vectors * values[None, :]
    return np.linalg.norm(R, axis=0)


def dense_window(
    op: SpectralOperator | np.ndarray,
    window: tuple[float, float],
    vectors: bool = False,
    cap: int | None = None,
    domain: TorusDomain | None = None,
) -> EigenWindow:
    """All eigenvalues in ``[a, b]`` from a dense eigen-solve.

    Only the part of the spectrum at or below ``b`` is computed (LAPACK
    subset selection), which is where every acceptance window lives.
    """
    if isinstance(op, SpectralOperator):
        M = assemble_dense(op, cap=cap or 4096)
        domain = op.domain
    else:
        M = np.asarray(op)
    _check_hermitian(M)
    a, b = window
    n = M.shape[0]
    if vectors:
        w, V = sla.eigh(M, subset_by_value=(-np.inf, b), driver="evr")
    else:
        w = sla.eigh(M, eigvals_only=True, subset_by_value=(-np.inf, b), driver="evr")
        V = None
    res = _residual_norms(lambda X: M @ X, w, V) if V is not None else None
    return _as_window(np.asarray(w), V, (a, b), domain, res, {"method": "dense", "dim": n})


def clusters(values: np.ndarray, rel: float = 1e-9) -> list[tuple[float, int]]:
    """Group sorted eigenvalues closer than ``rel·spread`` into clusters."""
    values = np.sort(np.asarray(values, dtype=float))
    if values.size == 0:
        return []
    spread = max(float(values[-1] - values[0]), 1.0)
    out: list[tuple[float, int]] = []
    start = 0
    for i in range(1, values.size + 1):
        if i == values.size or values[i] - values[i - 1] > rel * spread:
            out.append((float(np.mean(values[start:i])), i - start))
            start = i
    return out


def _block_lanczos_pass(
    apply: Callable[[np.ndarray], np.ndarray],
    n: int,
    locked: np.ndarray,
    b: float,
    block: int,
    max_dim: int,
    tol: float,
    rng: np.random.Generator,
):
    """One block Lanczos run on the complement of ``locked``.

    Returns Ritz values and vectors that are converged and lie at or below
    ``b``, plus diagnostics.
    """

    def project(X):
        if locked.shape[1]:
            X = X - locked @ (locked.conj().T @ X)
        return X

    def orth(X, basis):
        for _ in range(2):
            X = project(X)
            if basis:
                Qall = np.hstack(basis)
                X = X - Qall @ (Qall.conj().T @ X)
        return X

    X = rng.standard_normal((n, block)) + 1j * rng.standard_normal((n, block))
    X = orth(X, [])
    Qb, _ = np.linalg.qr(X)
    basis: list[np.ndarray] = [Qb]
    HQ: list[np.ndarray] = []
    T = np.zeros((0, 0), dtype=complex)
    history: list[int] = []
    while True:
        Qj = basis[-1]
        W = project(apply(Qj))
        HQ.append(W)
        Qall = np.hstack(basis)
        m = Qall.shape[1]
        # Rayleigh quotient of the current Krylov space (full, for stability).
        col = Qall.conj().T @ W
        Tn = np.zeros((m, m), dtype=complex)
        Tn[: T.shape[0], : T.shape[1]] = T
        Tn[:, m - Qj.shape[1] :] = col
        Tn[m - Qj.shape[1] :, :] = col.conj().T
        T = 0.5 * (Tn + Tn.conj().T)
        R = orth(W - Qall @ col, [])
        R = R - Qall @ (Qall.conj().T @ R)
        theta, Y = np.linalg.eigh(T)
        # Residual of Ritz pairs: ‖R_last Y_last‖ with R = Q_{j+1} B_j.
        Qn, Bn = np.linalg.qr(R)
        keep = np.abs(np.diag(Bn)) > 1e-12 * max(1.0, float(np.max(np.abs(T))))
        last = Y[m - Qj.shape[1] :, :]
        resid = np.linalg.norm(Bn @ last, axis=0)
        below = theta <= b
        converged_below = below & (resid <= tol)
        history.append(int(np.sum(converged_below)))
        exhausted = m >= n - locked.shape[1] or not np.any(keep)
        stable = (
            len(history) >= 3
            and history[-1] == history[-2] == history[-3]
            and np.all(resid[below] <= tol)
        )
        # Also require the smallest Ritz value above the window edge to be
        # sufficiently converged that nothing is hiding just below b.
        above = ~below
        if np.any(above):
            k = int(np.argmax(above))
            edge_ok = theta[k] - resid[k] > b
        else:
            edge_ok = exhausted
        if exhausted or (stable and edge_ok):
            sel = np.where(below)[0]
            vecs = Qall @ Y[:, sel]
            info = {
                "krylov_dim": m,
                "exhausted": bool(exhausted),
                "max_ritz_residual": float(resid[below].max()) if np.any(below) else 0.0,
            }
            return theta[sel], vecs, info
        if m + block > max_dim:
            raise LanczosFailure(
                "Lanczos budget exhausted before the window converged",
                {
                    "krylov_dim": m,
                    "converged_below": history[-1],
                    "below": int(np.sum(below)),
                    "max_residual_below": float(resid[below].max()) if np.any(below) else 0.0,
                },
            )
        Qn = Qn[:, keep]
        Qn = orth(Qn, basis)
        Qn, _ = np.linalg.qr(Qn)
        basis.append(Qn)


def lanczos_window(
    op: SpectralOperator,
    window: tuple[float, float],
    max_iter: int = 400,
    tol: float = 1e-8,
    block: int = 8,
    seed: int = 0,
    vectors: bool = True,
    max_passes: int = 20,
) -> EigenWindow:
    """Eigenpairs inside ``window`` by block Lanczos with full reorthogonalization.

    Parameters
    ----------
    op : SpectralOperator
    window : (a, b)
    max_iter : int
        Maximum number of block steps per pass.
    tol : float
        Residual tolerance ``‖Hv - λv‖`` for unit Euclidean vectors.
    block : int
        Block size; multiplicities above it are recovered by deflated
        restarts.
    seed : int
        Seed of the random starting blocks.

    Raises
    ------
    LanczosFailure
        If a pass exceeds ``max_iter`` block steps, or the explicit residual
        check fails.
    """
    a, b = window
    n = op.size
    rng = np.random.default_rng(seed)
    locked = np.zeros((n, 0), dtype=complex)
    values = np.zeros(0)
    passes = []
    for _ in range(max_passes):
        theta, vecs, info = _block_lanczos_pass(
            op.apply_columns, n, locked, b, block, max_iter * block, tol, rng
        )
        passes.append(info)
        if theta.size == 0:
            break
        # Reorthogonalize new vectors against the locked set and each other.
        vecs = vecs - locked @ (locked.conj().T @ vecs)
        vecs, _ = np.linalg.qr(vecs)
        Hs = vecs.conj().T @ op.apply_columns(vecs)
        theta, Y = np.linalg.eigh(0.5 * (Hs + Hs.conj().T))
        vecs = vecs @ Y
        locked = np.hstack([locked, vecs])
        values = np.concatenate([values, theta])
        if info["exhausted"]:
            break
    else:
        raise LanczosFailure("deflated restarts kept finding new eigenvalues", {"passes": passes})
    order = np.argsort(values)
    values = values[order]
    locked = locked[:, order]
    res = _residual_norms(op.apply_columns, values, locked)
    if np.any(res > tol):
        raise LanczosFailure(
            "explicit residual check failed",
            {"max_residual": float(res.max()), "tol": tol, "passes": passes},
        )
    win = _as_window(
        values,
        locked if vectors else None,
        (a, b),
        op.domain,
        res,
        {"method": "lanczos", "passes": passes},
    )
    return win


def eigenfunction_values(window: EigenWindow, x_index) -> np.ndarray:
    """``|ψ_k(x)|²`` for every window eigenfunction at a grid point.

    Parameters
    ----------
    window : EigenWindow
        Must carry eigenvectors.
    x_index : tuple of int or int
        Grid multi-index, or flat row-major index.
    """
    if window.eigenvectors is None:
        raise ValueError("eigenvectors are required for point values")
    if np.ndim(x_index):
        flat = int(np.ravel_multi_index(tuple(int(i) for i in x_index), window.domain.shape))
    else:
        flat = int(x_index)
    return np.abs(window.eigenvectors[flat, :]) ** 2


def export_eigenvalues_csv(window: EigenWindow, path: str | Path) -> None:
    """Write ``index, eigenvalue, residual`` rows."""
    res = window.residuals if window.residuals is not None else np.full(len(window), np.nan)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "eigenvalue", "residual"])
        for i, (lam, r) in enumerate(zip(window.eigenvalues, res)):
            writer.writerow([i, repr(float(lam)), repr(float(r))])
