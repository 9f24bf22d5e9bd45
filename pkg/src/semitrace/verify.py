"""End-to-end verification of the trace and diagonal-kernel expansions.

The pipeline computes ``T(p) = tr φ(H_p)`` over a ladder of semiclassical
parameters, certifies each discretization by grid doubling, cross-checks the
eigenvalue route against the resolvent-integral route, fits
``T(p) p^{-d} ≈ Σ_r c_r p^{-r}`` and compares the fitted coefficients with the
analytic ``f_0(φ)``, ``0`` and ``f_2(φ)``.  The same eigenpairs give the
diagonal kernel ``K(x, x) = Σ_k φ(λ_k) |ψ_k(x)|²`` at sample points.

Resolution certificate
    Each discretization is compared with the one on the grid with twice the
    points per axis.  If the fine problem is small enough its eigenvalues are
    computed directly.  Otherwise the coarse window eigenvectors are
    prolonged (exact Fourier zero-padding) and a Rayleigh–Ritz step on the
    fine operator yields Ritz values ``θ_i`` and the residual
    ``R = H_fine X - X Θ``; every fine eigenvalue tracked by the window then
    lies within ``‖R‖_2²/gap`` below its Ritz value, so

        ``max_i |λ_i - θ_i| + ‖R‖_2² / gap``

    bounds the eigenvalue change under grid doubling (``gap`` = distance from
    the trace window to the top of the Ritz window).
"""

from __future__ import annotations

import csv
import itertools
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .coeffs import f0_pointwise, f2_pointwise, trace_coefficient
from .discretize import DEFAULT_DENSE_CAP, SpectralOperator, build_operator, grid_size_rule, prolong
from .eig import EigenWindow, dense_window, lanczos_window
from .hsfc import hs_trace
from .model import ProblemSpec, TestFunction, TorusDomain

__all__ = [
    "ResolutionError",
    "ResolutionCertificate",
    "LadderSettings",
    "LadderEntry",
    "TraceLadder",
    "ExpansionFit",
    "KernelOrderCheck",
    "resolution_certificate",
    "spectral_window",
    "trace_of_phi",
    "diagonal_kernel",
    "kernel_grid",
    "build_ladder",
    "expansion_fit",
    "analytic_targets",
    "kernel_order_check",
    "lattice_trace",
    "observed_order",
]


class ResolutionError(RuntimeError):
    """Raised when a discretization fails its resolution certificate."""

    def __init__(self, message: str, certificate: "ResolutionCertificate"):
        super().__init__(message)
        self.certificate = certificate


# ---------------------------------------------------------------------------
# Resolution certificate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResolutionCertificate:
    """Outcome of the grid-doubling check.

    Attributes
    ----------
    passed : bool
        ``bound ≤ tol`` and the eigenvalue counts below ``upper`` agree.
    mode : {"dense", "ritz"}
        Fine-grid eigenvalues computed directly, or bounded by Rayleigh–Ritz.
    bound : float
        Bound on ``max |λ_i(N) - λ_i(2N)|`` over eigenvalues ``≤ upper``.
    ritz_shift : float
        ``max |λ_i - θ_i|`` (``ritz`` mode) or the exact shift (``dense``).
    residual_norm : float
        ``‖R‖_2`` of the unit-norm prolonged basis (``ritz`` mode only).
    gap : float
        Separation used in the quadratic bound.
    count, fine_count : int
        Eigenvalues ``≤ upper`` on the coarse and on the fine grid.
    coarse_n, fine_n : int
        Grid points per axis.
    """

    passed: bool
    mode: str
    bound: float
    ritz_shift: float
    residual_norm: float
    gap: float
    count: int
    fine_count: int
    coarse_n: int
    fine_n: int
    tol: float

    def to_dict(self) -> dict:
        return asdict(self)


def _counts_agree(coarse: np.ndarray, fine: np.ndarray, upper: float, slack: float) -> tuple[bool, int]:
    """Counts below ``upper`` agree up to eigenvalues within ``slack`` of it."""
    count = int(np.count_nonzero(coarse <= upper))
    lo = int(np.count_nonzero(fine <= upper - slack))
    hi = int(np.count_nonzero(fine <= upper + slack))
    return lo <= count <= hi, int(np.count_nonzero(fine <= upper))


def resolution_certificate(
    op: SpectralOperator,
    window: EigenWindow,
    upper: float,
    tol: float = 1e-8,
    fine_cap: int = DEFAULT_DENSE_CAP,
    block: int = 64,
) -> ResolutionCertificate:
    """Certify the eigenvalues ``≤ upper`` of ``op`` by grid doubling.

    When the doubled grid is small enough (``≤ fine_cap`` unknowns) its
    eigenvalues are computed directly.  Otherwise the coarse window
    eigenvectors are prolonged and a Rayleigh–Ritz step bounds the change:
    fine eigenvalues satisfy ``θ_i - ‖R‖²/gap ≤ μ_i ≤ θ_i``.

    Parameters
    ----------
    op : SpectralOperator
        Coarse operator.
    window : EigenWindow
        Its eigenpairs up to an energy above ``upper`` (the margin provides
        the gap of the quadratic bound); eigenvectors are needed in ``ritz``
        mode.
    upper : float
        Top of the trace window.
    tol : float
        Required bound on the eigenvalue change.
    fine_cap : int
        Largest fine dimension solved densely.
    block : int
        Columns processed at a time on the fine grid.
    """
    domain = op.domain
    n = domain.grid_n
    fine_n = 2 * n
    fine_domain = domain.with_grid(fine_n)
    fine = build_operator(fine_domain, op.A, op.V, op.p, workers=op.workers)
    lam = window.eigenvalues
    count = int(np.count_nonzero(lam <= upper))
    if fine.size <= fine_cap:
        mu = dense_window(fine, (-np.inf, float(lam[-1]) if lam.size else upper), cap=fine_cap).eigenvalues
        m = min(count, mu.size)
        shift = float(np.max(np.abs(mu[:m] - lam[:m]), initial=0.0)) if m == count else math.inf
        ok, fine_count = _counts_agree(lam, mu, upper, max(shift, tol))
        return ResolutionCertificate(
            bool(ok and shift <= tol), "dense", shift, shift, 0.0, math.nan, count, fine_count, n, fine_n, tol
        )
    if window.eigenvectors is None:
        raise ValueError("the Rayleigh-Ritz certificate needs window eigenvectors")
    k = lam.size
    if k == 0:
        return ResolutionCertificate(True, "ritz", 0.0, 0.0, 0.0, math.inf, 0, 0, n, fine_n, tol)
    # Unit Euclidean rows on the fine grid.
    rows = prolong(window.eigenvectors.T, domain, fine_n) * math.sqrt(fine_domain.cell_volume)
    HX = np.empty_like(rows)
    for start in range(0, k, block):
        sl = slice(start, min(start + block, k))
        HX[sl] = fine.apply(rows[sl])
    theta_mat = rows.conj() @ HX.T
    theta_mat = 0.5 * (theta_mat + theta_mat.conj().T)
    HX -= theta_mat.T @ rows  # residual rows
    res2 = float(np.linalg.eigvalsh(HX.conj() @ HX.T)[-1])
    del HX
    theta = np.linalg.eigvalsh(theta_mat)
    top = float(max(theta[-1], lam[-1]))
    gap = top - upper
    shift = float(np.max(np.abs(theta[:count] - lam[:count]), initial=0.0))
    bound = shift + (max(res2, 0.0) / gap if gap > 0 else math.inf)
    ok, fine_count = _counts_agree(lam, theta, upper, max(bound, tol))
    return ResolutionCertificate(
        bool(ok and bound <= tol), "ritz", bound, shift, math.sqrt(max(res2, 0.0)), gap, count, fine_count, n, fine_n, tol
    )


# ---------------------------------------------------------------------------
# Traces and kernels
# ---------------------------------------------------------------------------


def _spectral_floor(op: SpectralOperator) -> float:
    """Lower bound of ``H_p``: the magnetic kinetic part is nonnegative."""
    return float(np.min(op.V_grid)) - 1.0


def spectral_window(
    op: SpectralOperator,
    upper: float,
    vectors: bool = False,
    cap: int = DEFAULT_DENSE_CAP,
    lanczos: dict | None = None,
) -> EigenWindow:
    """All eigenpairs ``≤ upper``: dense below ``cap``, block Lanczos above."""
    window = (_spectral_floor(op), float(upper))
    if op.size <= cap:
        return dense_window(op, window, vectors=vectors, cap=cap)
    return lanczos_window(op, window, vectors=vectors, **(lanczos or {}))


def trace_of_phi(
    op: SpectralOperator,
    phi: TestFunction,
    method: str = "eig",
    *,
    cap: int = DEFAULT_DENSE_CAP,
    certify: bool = False,
    cert_tol: float = 1e-8,
    margin: float = 1.0,
    hs: dict | None = None,
    lanczos: dict | None = None,
) -> float:
    """``tr φ(H_p)``.

    Parameters
    ----------
    method : {"eig", "hsfc"}
        ``Σ_k φ(λ_k)`` over the window eigenvalues, or the resolvent integral.
    certify : bool
        Run the grid-doubling certificate first and refuse on failure.
    hs : dict, optional
        Keyword arguments for :func:`semitrace.hsfc.hs_trace`
        (``N``, ``delta``, ``quad_n``).

    Raises
    ------
    ResolutionError
        If ``certify`` and the certificate fails.
    """
    b = phi.support[1]
    if certify:
        win = spectral_window(op, b + margin, vectors=True, cap=cap, lanczos=lanczos)
        cert = resolution_certificate(op, win, b, cert_tol, fine_cap=cap)
        if not cert.passed:
            raise ResolutionError(f"grid n={op.domain.grid_n} is not resolved (bound {cert.bound:.3e})", cert)
    if method == "eig":
        win = spectral_window(op, b, cap=cap, lanczos=lanczos)
        return float(np.sum(phi(win.eigenvalues)))
    if method == "hsfc":
        return hs_trace(phi, op, cap=cap, **(hs or {}))
    raise ValueError(f"unknown trace method {method!r}")


def kernel_grid(window: EigenWindow, phi: TestFunction) -> np.ndarray:
    """Diagonal kernel ``Σ_k φ(λ_k)|ψ_k(x)|²`` at every grid point."""
    if window.eigenvectors is None:
        raise ValueError("eigenvectors are required for the diagonal kernel")
    weights = phi(window.eigenvalues)
    vals = (np.abs(window.eigenvectors) ** 2) @ weights
    return vals.reshape(window.domain.shape)


def diagonal_kernel(
    source: EigenWindow | SpectralOperator,
    phi: TestFunction,
    x_index,
    cap: int = DEFAULT_DENSE_CAP,
) -> float:
    """``K_{φ(H_p)}(x, x)`` at a grid point (multi-index or flat index).

    ``source`` is either an :class:`EigenWindow` with eigenvectors covering
    ``supp φ``, or an operator whose window is then computed.
    """
    if isinstance(source, SpectralOperator):
        source = spectral_window(source, phi.support[1], vectors=True, cap=cap)
    if source.eigenvectors is None:
        raise ValueError("eigenvectors are required for the diagonal kernel")
    if np.ndim(x_index):
        flat = int(np.ravel_multi_index(tuple(int(i) for i in x_index), source.domain.shape))
    else:
        flat = int(x_index)
    weights = phi(source.eigenvalues)
    return float(np.abs(source.eigenvectors[flat, :]) ** 2 @ weights)


def lattice_trace(phi: TestFunction, domain: TorusDomain, p: float) -> float:
    """Exact ``tr φ(H_p)`` of the free operator: ``Σ_{k∈Z^d} φ(|2πk/(pL)|²)``."""
    b = phi.support[1]
    if b <= 0:
        return 0.0
    ranges = []
    for L in domain.periods:
        kmax = int(math.floor(math.sqrt(b) * p * L / (2 * math.pi))) + 1
        ranges.append(np.arange(-kmax, kmax + 1))
    mesh = np.meshgrid(*ranges, indexing="ij")
    energy = sum((2 * math.pi * k / (p * L)) ** 2 for k, L in zip(mesh, domain.periods))
    return float(np.sum(phi(energy)))


def _grid_index(domain: TorusDomain, point: Sequence[float]) -> tuple[int, ...]:
    idx = []
    for x, L in zip(point, domain.periods):
        pos = float(x) / L * domain.grid_n
        k = int(round(pos))
        if abs(pos - k) > 1e-9:
            raise ValueError(f"point {tuple(point)} is not on the grid with n={domain.grid_n}")
        idx.append(k % domain.grid_n)
    return tuple(idx)


# ---------------------------------------------------------------------------
# Ladder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LadderSettings:
    """Numerical settings of a trace ladder.

    Attributes
    ----------
    grid_c, grid_multiple, grid_min
        Parameters of :func:`semitrace.discretize.grid_size_rule` (energy
        cutoff: the top of ``supp φ``).
    margin : float
        Certificate window extends to ``b + margin``.
    certify, cert_tol, refine, max_refine
        Grid-doubling certificate; with ``refine`` an uncertified grid is
        enlarged by ``grid_multiple`` points up to ``max_refine`` times.
    dense_cap : int
        Largest dense dimension; larger problems use block Lanczos.
    lanczos : dict
        Keyword arguments for :func:`semitrace.eig.lanczos_window`.
    dual_route : bool
        Also evaluate the resolvent-integral trace where dense is feasible.
    hs_order, hs_delta, hs_quad_n
        Extension depth, strip half-width, nodes per panel.
    kernel_points : tuple of points
        Sample points (coordinates) for the diagonal kernel.
    workers : int
        FFT worker threads.
    exact_free : bool
        For ``A = 0, V = 0`` use the exact lattice spectrum instead of a
        discretization (the continuum eigenvalues are known in closed form).
    """

    grid_c: float = 1.5
    grid_multiple: int = 4
    grid_min: int = 8
    margin: float = 1.0
    certify: bool = True
    cert_tol: float = 1e-8
    refine: bool = False
    max_refine: int = 3
    dense_cap: int = DEFAULT_DENSE_CAP
    lanczos: dict = field(default_factory=dict)
    dual_route: bool = True
    hs_order: int = 4
    hs_delta: float | None = None
    hs_quad_n: int = 60
    kernel_points: tuple = ()
    workers: int = 1
    exact_free: bool = True


@dataclass
class LadderEntry:
    """One rung of the ladder."""

    p: float
    trace: float
    method: str
    grid_n: int
    certified: bool
    count: int
    certificate: dict | None = None
    hs_trace: float | None = None
    dual_rel_diff: float | None = None
    kernel: list[float] | None = None
    kernel_consistency: float | None = None
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TraceLadder:
    """Traces ``T(p)`` over strictly increasing ``p``."""

    entries: list[LadderEntry]
    d: int

    def __post_init__(self) -> None:
        ps = [e.p for e in self.entries]
        if any(b <= a for a, b in zip(ps, ps[1:])):
            raise ValueError("ladder p values must be strictly increasing")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def p(self) -> np.ndarray:
        return np.array([e.p for e in self.entries], dtype=float)

    @property
    def traces(self) -> np.ndarray:
        return np.array([e.trace for e in self.entries], dtype=float)

    @property
    def all_certified(self) -> bool:
        return all(e.certified for e in self.entries)

    @property
    def max_dual_rel_diff(self) -> float | None:
        vals = [e.dual_rel_diff for e in self.entries if e.dual_rel_diff is not None]
        return max(vals) if vals else None

    def to_dicts(self) -> list[dict]:
        return [e.to_dict() for e in self.entries]


def is_free_problem(problem: ProblemSpec) -> bool:
    return all(f.is_zero() for f in problem.B.upper.values()) and problem.V.is_zero()


def _lattice_entry(problem: ProblemSpec, p: float, settings: LadderSettings) -> LadderEntry:
    """Ladder rung of the free operator from its exact spectrum.

    The kernel is translation invariant, so ``K(x, x) = T / vol`` everywhere.
    """
    start = time.perf_counter()
    trace = lattice_trace(problem.phi, problem.domain, p)
    entry = LadderEntry(p=float(p), trace=trace, method="lattice", grid_n=0, certified=True, count=0)
    if settings.kernel_points:
        entry.kernel = [trace / problem.domain.volume] * len(settings.kernel_points)
        entry.kernel_consistency = 0.0
    entry.seconds = time.perf_counter() - start
    return entry


def _ladder_entry(problem: ProblemSpec, p: float, settings: LadderSettings) -> LadderEntry:
    if settings.exact_free and is_free_problem(problem):
        return _lattice_entry(problem, p, settings)
    start = time.perf_counter()
    phi = problem.phi
    b = phi.support[1]
    domain = problem.domain
    kmax = problem.max_wavenumber
    n = grid_size_rule(
        p, domain.periods, b, kmax=kmax, c=settings.grid_c, multiple=settings.grid_multiple, minimum=settings.grid_min
    )
    attempts = 1 + (settings.max_refine if settings.refine else 0)
    for attempt in range(attempts):
        dom = domain.with_grid(n)
        op = build_operator(dom, problem.A, problem.V, p, workers=settings.workers)
        upper = b + settings.margin if settings.certify else b
        ritz_mode = settings.certify and (2 * n) ** dom.d > settings.dense_cap
        need_vectors = ritz_mode or bool(settings.kernel_points)
        win = spectral_window(op, upper, vectors=need_vectors, cap=settings.dense_cap, lanczos=settings.lanczos)
        cert = None
        certified = True
        if settings.certify:
            cert = resolution_certificate(op, win, b, settings.cert_tol, fine_cap=settings.dense_cap)
            certified = cert.passed
        if certified or attempt == attempts - 1:
            break
        n += settings.grid_multiple
    inside = win.eigenvalues <= b
    values = win.eigenvalues[inside]
    trace = float(np.sum(phi(values)))
    entry = LadderEntry(
        p=float(p),
        trace=trace,
        method="eig",
        grid_n=n,
        certified=certified,
        count=int(values.size),
        certificate=cert.to_dict() if cert else None,
    )
    if settings.kernel_points:
        sub = EigenWindow(win.window, values, win.eigenvectors[:, inside], None, dom)
        K = kernel_grid(sub, phi)
        entry.kernel = [float(K[_grid_index(dom, x)]) for x in settings.kernel_points]
        entry.kernel_consistency = abs(float(np.mean(K)) * dom.volume - trace) / max(abs(trace), 1e-300)
    if settings.dual_route and op.size <= settings.dense_cap:
        hs_val = hs_trace(phi, op, settings.hs_order, settings.hs_delta, settings.hs_quad_n, cap=settings.dense_cap)
        entry.hs_trace = hs_val
        entry.dual_rel_diff = abs(hs_val - trace) / max(abs(trace), 1e-300)
    entry.seconds = time.perf_counter() - start
    return entry


def build_ladder(problem: ProblemSpec, ps: Sequence[float], settings: LadderSettings | None = None) -> TraceLadder:
    """Evaluate ``T(p)`` for each ``p`` in ``ps`` (sorted ascending)."""
    settings = settings or LadderSettings()
    entries = [_ladder_entry(problem, p, settings) for p in sorted(float(p) for p in ps)]
    return TraceLadder(entries, problem.domain.d)


# ---------------------------------------------------------------------------
# Fit
# ---------------------------------------------------------------------------


@dataclass
class ExpansionFit:
    """Least-squares fit of ``T(p) p^{-d} = Σ_r c_r p^{-r}``.

    Attributes
    ----------
    orders : tuple of int
    coefficients, stderr : ndarray
        Fitted ``c_r`` and their standard errors.
    residual_norm : float
        Euclidean norm of the fit residual.
    condition_number : float
        2-norm condition number of the design matrix.
    targets : dict
        Analytic values by order (``None`` when unavailable).
    rel_errors : dict
        ``|c_r - f_r| / |f_r|`` where defined.
    upper_fit : ndarray or None
        Coefficients refitted on the upper part of the ladder.
    upper_count : int
        Points used by the upper refit.
    subset_c0_shift : float
        Largest move of ``c_0`` over all 80% subsets, in standard errors.
    """

    orders: tuple[int, ...]
    p: np.ndarray
    values: np.ndarray
    coefficients: np.ndarray
    stderr: np.ndarray
    residual_norm: float
    condition_number: float
    targets: dict = field(default_factory=dict)
    rel_errors: dict = field(default_factory=dict)
    upper_fit: np.ndarray | None = None
    upper_count: int = 0
    subset_c0_shift: float = 0.0

    def coefficient(self, r: int) -> float:
        return float(self.coefficients[self.orders.index(r)])

    def upper_coefficient(self, r: int) -> float | None:
        if self.upper_fit is None:
            return None
        return float(self.upper_fit[self.orders.index(r)])

    def to_dict(self) -> dict:
        return {
            "orders": list(self.orders),
            "coefficients": [float(c) for c in self.coefficients],
            "stderr": [float(s) for s in self.stderr],
            "residual_norm": self.residual_norm,
            "condition_number": self.condition_number,
            "targets": {str(k): v for k, v in self.targets.items()},
            "rel_errors": {str(k): v for k, v in self.rel_errors.items()},
            "upper_fit": None if self.upper_fit is None else [float(c) for c in self.upper_fit],
            "upper_count": self.upper_count,
            "subset_c0_shift": self.subset_c0_shift,
        }


def _lstsq(p: np.ndarray, y: np.ndarray, orders: Sequence[int]):
    X = np.stack([p ** (-float(r)) for r in orders], axis=1)
    rank = np.linalg.matrix_rank(X)
    if rank < len(orders):
        raise np.linalg.LinAlgError(f"design matrix is rank deficient (rank {rank} < {len(orders)})")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return X, coef


def expansion_fit(
    ladder: TraceLadder | tuple[Sequence[float], Sequence[float]],
    d: int | None = None,
    orders: Sequence[int] = (0, 1, 2, 3),
    targets: dict | None = None,
    min_points: int = 6,
) -> ExpansionFit:
    """Fit the expansion coefficients with uniform weights.

    Parameters
    ----------
    ladder : TraceLadder or (p, T)
    d : int, optional
        Dimension; taken from the ladder when omitted.
    orders : sequence of int
        Powers ``r`` of ``p^{-r}`` in the model.
    targets : dict, optional
        Analytic ``f_r(φ)`` by order, used for relative errors.
    min_points : int
        Minimum ladder length (also at least ``len(orders) + 2``).

    Raises
    ------
    ValueError
        If the ladder is too short.
    numpy.linalg.LinAlgError
        If the design matrix is rank deficient.
    """
    if isinstance(ladder, TraceLadder):
        p, T = ladder.p, ladder.traces
        d = ladder.d if d is None else d
    else:
        p, T = (np.asarray(v, dtype=float) for v in ladder)
        if d is None:
            raise ValueError("the dimension is required for raw data")
    orders = tuple(int(r) for r in orders)
    need = max(min_points, len(orders) + 2)
    if p.size < need:
        raise ValueError(f"fit needs at least {need} ladder points, got {p.size}")
    y = T * p ** (-float(d))
    X, coef = _lstsq(p, y, orders)
    resid = y - X @ coef
    dof = p.size - len(orders)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    stderr = np.sqrt(np.maximum(np.diag(cov), 0.0))
    cond = float(np.linalg.cond(X))

    order = np.argsort(p)
    upper_idx = order[-max(need, (p.size + 1) // 2) :]
    upper = None
    if upper_idx.size < p.size:
        _, upper = _lstsq(p[upper_idx], y[upper_idx], orders)

    size = max(need, int(math.ceil(0.8 * p.size)))
    shift = 0.0
    if size < p.size and 0 in orders:
        i0 = orders.index(0)
        for subset in itertools.combinations(range(p.size), size):
            _, c = _lstsq(p[list(subset)], y[list(subset)], orders)
            if stderr[i0] > 0:
                shift = max(shift, abs(c[i0] - coef[i0]) / stderr[i0])
            elif c[i0] != coef[i0]:
                shift = math.inf

    targets = dict(targets or {})
    rel = {}
    for r, f in targets.items():
        if r in orders and f is not None and f != 0:
            rel[r] = abs(coef[orders.index(r)] - f) / abs(f)
    return ExpansionFit(
        orders, p, y, coef, stderr, float(np.linalg.norm(resid)), cond, targets, rel, upper, int(upper_idx.size), shift
    )


def analytic_targets(problem: ProblemSpec, grid_n: int | None = None) -> dict[int, float]:
    """``{0: f_0(φ), 1: 0, 2: f_2(φ)}`` for the problem."""
    B, V, phi, dom = problem.B, problem.V, problem.phi, problem.domain
    return {
        0: trace_coefficient(0, B, V, phi, dom, grid_n),
        1: 0.0,
        2: trace_coefficient(2, B, V, phi, dom, grid_n),
    }


# ---------------------------------------------------------------------------
# Diagonal kernel orders
# ---------------------------------------------------------------------------


def observed_order(h_or_p: np.ndarray, residual: np.ndarray, inverse: bool = True) -> float:
    """Slope of ``log|residual|`` against ``log p`` (negated) or ``log h``."""
    x = np.log(np.asarray(h_or_p, dtype=float))
    y = np.log(np.abs(np.asarray(residual, dtype=float)))
    slope = np.polyfit(x, y, 1)[0]
    return float(-slope if inverse else slope)


@dataclass
class KernelOrderCheck:
    """Decay of ``p^{-d} K(x, x) - f_0(x) - p^{-2} f_2(x)`` at sample points."""

    p: np.ndarray
    points: tuple
    residuals: np.ndarray  # (len(p), len(points))
    orders: np.ndarray
    f0: np.ndarray
    f2: np.ndarray
    consistency: float

    @property
    def min_order(self) -> float:
        return float(np.min(self.orders))

    def to_dict(self) -> dict:
        return {
            "p": [float(v) for v in self.p],
            "points": [list(map(float, x)) for x in self.points],
            "residuals": self.residuals.tolist(),
            "orders": [float(o) for o in self.orders],
            "f0": [float(v) for v in self.f0],
            "f2": [float(v) for v in self.f2],
            "consistency": self.consistency,
        }


def kernel_order_check(
    ladder: TraceLadder,
    problem: ProblemSpec,
    points: Sequence[Sequence[float]],
    p_max: float | None = None,
) -> KernelOrderCheck:
    """Observed decay order of the pointwise kernel remainder.

    The ladder must have been built with ``kernel_points = points``.  Only
    entries with ``p <= p_max`` enter the slope fit (all when ``None``).
    """
    entries = [e for e in ladder.entries if p_max is None or e.p <= p_max]
    if len(entries) < 2:
        raise ValueError("kernel order check needs at least two ladder entries")
    if any(e.kernel is None for e in entries):
        raise ValueError("ladder entries carry no kernel values")
    pts = np.asarray(points, dtype=float)
    f0 = np.asarray(f0_pointwise(problem.V, pts, problem.phi))
    f2 = np.asarray(f2_pointwise(problem.B, problem.V, pts, problem.phi))
    p = np.array([e.p for e in entries])
    K = np.array([e.kernel for e in entries])
    res = K * p[:, None] ** (-float(ladder.d)) - f0[None, :] - f2[None, :] * p[:, None] ** -2.0
    orders = np.array([observed_order(p, res[:, j]) for j in range(pts.shape[0])])
    consistency = max(e.kernel_consistency or 0.0 for e in entries)
    return KernelOrderCheck(p, tuple(map(tuple, pts)), res, orders, f0, f2, consistency)


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def write_ladder_csv(ladder: TraceLadder, path: str | Path) -> None:
    """``p, T, method, grid_n`` plus certificate and dual-route columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "T", "method", "grid_n", "certified", "count", "hs_T", "dual_rel_diff"])
        for e in ladder.entries:
            w.writerow(
                [
                    repr(e.p),
                    repr(e.trace),
                    e.method,
                    e.grid_n,
                    int(e.certified),
                    e.count,
                    "" if e.hs_trace is None else repr(e.hs_trace),
                    "" if e.dual_rel_diff is None else repr(e.dual_rel_diff),
                ]
            )


def write_fit_csv(fit: ExpansionFit, path: str | Path) -> None:
    """``r, c_r, stderr, analytic, rel_err``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "c_r", "stderr", "analytic", "rel_err"])
        for r, c, s in zip(fit.orders, fit.coefficients, fit.stderr):
            target = fit.targets.get(r)
            rel = fit.rel_errors.get(r)
            w.writerow(
                [r, repr(float(c)), repr(float(s)), "" if target is None else repr(float(target)), "" if rel is None else repr(float(rel))]
            )


def write_plot_tsv(fit: ExpansionFit, path: str | Path) -> None:
    """Columns ``p^{-2}`` and ``T(p) p^{-d} - c_0``."""
    c0 = fit.coefficient(0) if 0 in fit.orders else 0.0
    with open(path, "w") as fh:
        fh.write("p_inv2\tscaled_trace_minus_c0\n")
        for p, y in zip(fit.p, fit.values):
            fh.write(f"{p ** -2.0!r}\t{float(y - c0)!r}\n")
