"""Problem description: torus geometry, fields and test functions.

Every field is a finite real trigonometric polynomial on a flat torus
``R^d / (L_1 Z x ... x L_d Z)``.  This keeps all derivatives exact and makes
grid sampling spectrally exact, so that the only numerical errors left in
the pipeline come from the spectral problem itself.

Test functions are compactly supported bumps

.. math::

    \\phi(t) = s \\, P(t) \\exp\\left(-\\frac{w^2}{w^2 - (t - c)^2}\\right),
    \\qquad |t - c| < w,

whose derivatives are evaluated through an exact rational recurrence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

__all__ = [
    "TorusDomain",
    "ScalarField",
    "MagneticField",
    "VectorPotential",
    "TestFunction",
    "ProblemSpec",
    "sample_field",
    "test_function_eval",
    "MAX_DERIVATIVE",
]

#: Highest derivative order provided by :class:`TestFunction`.
MAX_DERIVATIVE = 5

# exp(g) with g below this is flushed to zero; avoids 0 * inf in the
# rational prefactor close to the support edges.
_EXP_FLOOR = -700.0


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TorusDomain:
    """Flat torus with a uniform tensor grid.

    Parameters
    ----------
    d : int
        Dimension, 2 or 3.
    periods : tuple of float
        Period ``L_j`` along each axis.
    grid_n : int
        Number of grid points (= Fourier modes) per axis; even and >= 8.
    """

    d: int
    periods: tuple[float, ...]
    grid_n: int = 32

    def __post_init__(self) -> None:
        periods = tuple(float(L) for L in np.broadcast_to(self.periods, (self.d,)))
        object.__setattr__(self, "periods", periods)
        if self.d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.d}")
        if any(L <= 0 for L in periods):
            raise ValueError(f"periods must be positive, got {periods}")
        if self.grid_n < 8 or self.grid_n % 2:
            raise ValueError(f"grid_n must be even and >= 8, got {self.grid_n}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.grid_n,) * self.d

    @property
    def size(self) -> int:
        return self.grid_n**self.d

    @property
    def volume(self) -> float:
        return float(np.prod(self.periods))

    @property
    def cell_volume(self) -> float:
        return self.volume / self.size

    def with_grid(self, grid_n: int) -> "TorusDomain":
        """Same torus, different resolution."""
        return TorusDomain(self.d, self.periods, grid_n)

    def axes(self) -> list[np.ndarray]:
        """1D coordinate arrays ``x_m = m L / N`` per axis."""
        return [np.arange(self.grid_n) * L / self.grid_n for L in self.periods]

    def grid_points(self) -> np.ndarray:
        """Grid coordinates of shape ``(N, ..., N, d)`` in row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def point(self, index: Sequence[int]) -> np.ndarray:
        """Coordinates of the grid point with multi-index ``index``."""
        return np.array([i * L / self.grid_n for i, L in zip(index, self.periods)])

    def to_dict(self) -> dict:
        return {"d": self.d, "periods": list(self.periods), "grid_n": self.grid_n}

    @classmethod
    def from_dict(cls, data: dict) -> "TorusDomain":
        return cls(int(data["d"]), tuple(data["periods"]), int(data.get("grid_n", 32)))


# ---------------------------------------------------------------------------
# Trigonometric polynomials
# ---------------------------------------------------------------------------


def _canonical(k: tuple[int, ...]) -> tuple[tuple[int, ...], int]:
    """Representative of ``{k, -k}`` with first nonzero entry positive.

    Returns the representative and the sign flip (+1 or -1) applied.
    """
    for kj in k:
        if kj > 0:
            return k, 1
        if kj < 0:
            return tuple(-x for x in k), -1
    return k, 1


@dataclass(frozen=True)
class ScalarField:
    """Real trigonometric polynomial on a torus.

    The field is

    .. math::

        f(x) = f_0 + \\sum_k a_k \\cos\\theta_k(x) + b_k \\sin\\theta_k(x),
        \\qquad \\theta_k(x) = \\sum_j 2\\pi k_j x_j / L_j .

    Modes are stored canonically: ``k`` and ``-k`` are merged, the zero mode
    is folded into ``constant`` and vanishing amplitudes are dropped, so two
    equal fields compare equal.

    Parameters
    ----------
    periods : tuple of float
        Torus periods the wave vectors refer to.
    modes : iterable of (k, cos_amplitude, sin_amplitude)
        Integer wave vectors with real amplitudes.
    constant : float
        Mean value.
    """

    periods: tuple[float, ...]
    modes: tuple[tuple[tuple[int, ...], float, float], ...] = ()
    constant: float = 0.0

    def __post_init__(self) -> None:
        periods = tuple(float(L) for L in self.periods)
        d = len(periods)
        merged: dict[tuple[int, ...], list[float]] = {}
        constant = float(self.constant)
        for k, a, b in self.modes:
            k = tuple(int(x) for x in k)
            if len(k) != d:
                raise ValueError(f"wave vector {k} has wrong dimension for d={d}")
            key, sign = _canonical(k)
            if not any(key):
                constant += float(a)
                continue
            acc = merged.setdefault(key, [0.0, 0.0])
            acc[0] += float(a)
            acc[1] += sign * float(b)
        modes = tuple(
            (k, ab[0], ab[1]) for k, ab in sorted(merged.items()) if ab[0] != 0.0 or ab[1] != 0.0
        )
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "constant", constant)

    # -- construction helpers ------------------------------------------------
    @classmethod
    def const(cls, periods: Sequence[float], value: float) -> "ScalarField":
        return cls(tuple(periods), (), value)

    @classmethod
    def zero(cls, periods: Sequence[float]) -> "ScalarField":
        return cls(tuple(periods))

    @property
    def d(self) -> int:
        return len(self.periods)

    @property
    def max_wavenumber(self) -> int:
        """Largest ``|k_j|`` over all modes and axes (0 for a constant)."""
        return max((max(abs(x) for x in k) for k, _, _ in self.modes), default=0)

    def _omega(self, k: tuple[int, ...]) -> np.ndarray:
        return np.array([2.0 * math.pi * kj / L for kj, L in zip(k, self.periods)])

    # -- evaluation -----------------------------------------------------------
    def __call__(self, x: np.ndarray) -> np.ndarray | float:
        """Evaluate at points ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ValueError(f"points must have trailing dimension {self.d}")
        out = np.full(x.shape[:-1], self.constant)
        for k, a, b in self.modes:
            theta = x @ self._omega(k)
            if a:
                out = out + a * np.cos(theta)
            if b:
                out = out + b * np.sin(theta)
        return out if out.ndim else float(out)

    # -- calculus -------------------------------------------------------------
    def derivative(self, alpha: Sequence[int]) -> "ScalarField":
        """Exact partial derivative ``∂^α f``."""
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.d or any(a < 0 for a in alpha):
            raise ValueError(f"invalid multi-index {alpha}")
        order = sum(alpha)
        if order == 0:
            return self
        modes = []
        for k, a, b in self.modes:
            factor = float(np.prod(self._omega(k) ** np.array(alpha)))
            # d^n/dθ^n (a cos + b sin) cycles with period 4.
            for _ in range(order % 4):
                a, b = b, -a
            modes.append((k, factor * a, factor * b))
        return ScalarField(self.periods, tuple(modes), 0.0)

    def partial(self, j: int, times: int = 1) -> "ScalarField":
        alpha = [0] * self.d
        alpha[j] = times
        return self.derivative(alpha)

    def gradient(self) -> list["ScalarField"]:
        return [self.partial(j) for j in range(self.d)]

    def laplacian(self) -> "ScalarField":
        out = ScalarField.zero(self.periods)
        for j in range(self.d):
            out = out + self.partial(j, 2)
        return out

    def inverse_laplacian(self) -> "ScalarField":
        """Zero-mean solution ``u`` of ``Δu = f - mean(f)``."""
        modes = []
        for k, a, b in self.modes:
            w2 = float(np.sum(self._omega(k) ** 2))
            modes.append((k, -a / w2, -b / w2))
        return ScalarField(self.periods, tuple(modes), 0.0)

    # -- algebra --------------------------------------------------------------
    def _check_compatible(self, other: "ScalarField") -> None:
        if not np.allclose(self.periods, other.periods, rtol=0, atol=1e-14):
            raise ValueError("fields live on tori with different periods")

    def __add__(self, other: "ScalarField | float") -> "ScalarField":
        if isinstance(other, ScalarField):
            self._check_compatible(other)
            return ScalarField(self.periods, self.modes + other.modes, self.constant + other.constant)
        return ScalarField(self.periods, self.modes, self.constant + float(other))

    __radd__ = __add__

    def __neg__(self) -> "ScalarField":
        return self * -1.0

    def __sub__(self, other: "ScalarField | float") -> "ScalarField":
        return self + (-other)

    def __mul__(self, scalar: float) -> "ScalarField":
        s = float(scalar)
        return ScalarField(
            self.periods, tuple((k, s * a, s * b) for k, a, b in self.modes), s * self.constant
        )

    __rmul__ = __mul__

    def is_zero(self) -> bool:
        return not self.modes and self.constant == 0.0

    def coefficient_distance(self, other: "ScalarField") -> float:
        """Max-abs difference of the canonical coefficient lists."""
        diff = self - other
        vals = [abs(diff.constant)] + [max(abs(a), abs(b)) for _, a, b in diff.modes]
        return max(vals)

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "constant": self.constant,
            "modes": [{"k": list(k), "cos": a, "sin": b} for k, a, b in self.modes],
        }

    @classmethod
    def from_dict(cls, data: dict, periods: Sequence[float]) -> "ScalarField":
        modes = tuple(
            (tuple(m["k"]), float(m.get("cos", 0.0)), float(m.get("sin", 0.0)))
            for m in data.get("modes", [])
        )
        return cls(tuple(periods), modes, float(data.get("constant", 0.0)))


def sample_field(fld: ScalarField, domain: TorusDomain) -> np.ndarray:
    """Values of a trigonometric polynomial on the uniform grid of ``domain``.

    The field periods must divide the domain periods by integers; the wave
    vectors are rescaled accordingly.

    Raises
    ------
    ValueError
        If a field period is not an integer fraction of the domain period.
    """
    if fld.d != domain.d:
        raise ValueError(f"field dimension {fld.d} != domain dimension {domain.d}")
    ratios = []
    for ell, L in zip(fld.periods, domain.periods):
        r = L / ell
        if abs(r - round(r)) > 1e-12 or round(r) < 1:
            raise ValueError(
                f"wave vectors with period {ell} are incompatible with domain period {L}"
            )
        ratios.append(int(round(r)))
    # Exact evaluation through integer phases: theta = 2π (k·m)/N keeps the
    # argument reduction exact for every grid point.
    n = domain.grid_n
    idx = np.stack(np.meshgrid(*[np.arange(n)] * domain.d, indexing="ij"), axis=-1)
    out = np.full(domain.shape, fld.constant, dtype=float)
    for k, a, b in fld.modes:
        kk = np.array([kj * r for kj, r in zip(k, ratios)])
        phase = np.mod(idx @ kk, n)
        theta = 2.0 * math.pi * phase / n
        out += a * np.cos(theta) + b * np.sin(theta)
    return out


# ---------------------------------------------------------------------------
# Magnetic field and potential
# ---------------------------------------------------------------------------


def _pairs(d: int) -> list[tuple[int, int]]:
    return [(j, k) for j in range(d) for k in range(j + 1, d)]


@dataclass(frozen=True)
class MagneticField:
    """Antisymmetric field strength ``B_{jk}`` built from trig polynomials.

    Only the upper triangle ``j < k`` is stored; :meth:`component` returns
    ``B_{kj} = -B_{jk}`` and ``B_{jj} = 0`` exactly.

    Parameters
    ----------
    d : int
        Dimension.
    upper : dict mapping (j, k), j < k, to ScalarField
        Independent components; missing pairs are zero.
    """

    d: int
    upper: dict = field(default_factory=dict)
    periods: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        comps = {}
        periods = tuple(self.periods)
        for (j, k), fld in dict(self.upper).items():
            if not 0 <= j < k < self.d:
                raise ValueError(f"component index ({j}, {k}) must satisfy 0 <= j < k < d")
            comps[(j, k)] = fld
            periods = periods or fld.periods
        if not periods:
            raise ValueError("periods are required when no component is given")
        for pair in _pairs(self.d):
            comps.setdefault(pair, ScalarField.zero(periods))
        object.__setattr__(self, "upper", comps)
        object.__setattr__(self, "periods", tuple(float(L) for L in periods))

    @classmethod
    def planar(cls, b: ScalarField) -> "MagneticField":
        """Two-dimensional field with ``B_12 = b``."""
        return cls(2, {(0, 1): b}, b.periods)

    @classmethod
    def zero(cls, d: int, periods: Sequence[float]) -> "MagneticField":
        return cls(d, {}, tuple(periods))

    @classmethod
    def from_potential(cls, A: "VectorPotential") -> "MagneticField":
        """``B_{jk} = ∂_j A_k - ∂_k A_j``."""
        d = len(A.components)
        upper = {
            (j, k): A.components[k].partial(j) - A.components[j].partial(k)
            for j, k in _pairs(d)
        }
        return cls(d, upper, A.components[0].periods)

    def component(self, j: int, k: int) -> ScalarField:
        if j == k:
            return ScalarField.zero(self.periods)
        if j < k:
            return self.upper[(j, k)]
        return -self.upper[(k, j)]

    @cached_property
    def matrix(self) -> tuple[tuple[ScalarField, ...], ...]:
        """Full ``d x d`` table of components."""
        return tuple(tuple(self.component(j, k) for k in range(self.d)) for j in range(self.d))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Matrix values ``B_{jk}(x)``, shape ``(..., d, d)``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (self.d, self.d))
        for j, k in _pairs(self.d):
            v = self.upper[(j, k)](x)
            out[..., j, k] = v
            out[..., k, j] = -v
        return out

    @property
    def max_wavenumber(self) -> int:
        return max((f.max_wavenumber for f in self.upper.values()), default=0)

    def flux(self) -> dict[tuple[int, int], float]:
        """Mean of every component; nonzero means no periodic potential exists."""
        return {pair: fld.constant for pair, fld in self.upper.items()}

    def is_flux_free(self, tol: float = 1e-14) -> bool:
        return all(abs(m) <= tol for m in self.flux().values())

    def closedness_defect(self) -> float:
        """Coefficient size of ``dB`` (identically zero for ``d = 2``)."""
        if self.d == 2:
            return 0.0
        worst = 0.0
        for a, b, c in [(0, 1, 2)]:
            db = (
                self.component(b, c).partial(a)
                + self.component(c, a).partial(b)
                + self.component(a, b).partial(c)
            )
            worst = max(worst, db.coefficient_distance(ScalarField.zero(self.periods)))
        return worst

    def scaled(self, s: float) -> "MagneticField":
        return MagneticField(self.d, {p: s * f for p, f in self.upper.items()}, self.periods)

    def to_dict(self) -> dict:
        return {
            "components": [
                {"j": j, "k": k, **fld.to_dict()} for (j, k), fld in sorted(self.upper.items())
            ]
        }

    @classmethod
    def from_dict(cls, data: dict, d: int, periods: Sequence[float]) -> "MagneticField":
        upper = {
            (int(c["j"]), int(c["k"])): ScalarField.from_dict(c, periods)
            for c in data.get("components", [])
        }
        return cls(d, upper, tuple(periods))


@dataclass(frozen=True)
class VectorPotential:
    """Periodic one-form ``A = Σ A_j dx_j`` with trig-polynomial components."""

    components: tuple[ScalarField, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def d(self) -> int:
        return len(self.components)

    @classmethod
    def zero(cls, d: int, periods: Sequence[float]) -> "VectorPotential":
        return cls(tuple(ScalarField.zero(periods) for _ in range(d)))

    @classmethod
    def from_field(cls, B: MagneticField) -> "VectorPotential":
        """Coulomb-gauge potential with ``dA = B``.

        Uses ``A_k = Σ_m ∂_m Δ^{-1} B_{mk}``, which solves ``dA = B`` for a
        closed, flux-free ``B``.

        Raises
        ------
        ValueError
            If ``B`` has nonzero flux or is not closed.
        """
        if not B.is_flux_free():
            raise ValueError(f"magnetic flux must vanish for a periodic potential: {B.flux()}")
        if B.closedness_defect() > 1e-10:
            raise ValueError("magnetic field is not closed (dB != 0)")
        comps = []
        for k in range(B.d):
            acc = ScalarField.zero(B.periods)
            for m in range(B.d):
                acc = acc + B.component(m, k).inverse_laplacian().partial(m)
            comps.append(acc)
        return cls(tuple(comps))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Values ``A_j(x)``, shape ``(..., d)``."""
        return np.stack([c(x) for c in self.components], axis=-1)

    @property
    def max_wavenumber(self) -> int:
        return max(c.max_wavenumber for c in self.components)

    def gauge_shifted(self, chi: ScalarField) -> "VectorPotential":
        """``A + dχ`` for a periodic trig polynomial ``χ``."""
        return VectorPotential(tuple(a + g for a, g in zip(self.components, chi.gradient())))


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------


def _bump_numerators(width: float, kmax: int) -> list[Polynomial]:
    """Polynomials ``N_k(s)`` with ``bump^{(k)} = N_k(s) / q^{2k} · bump``.

    Here ``s = t - c`` and ``q = w² - s²``.  Differentiating the ansatz gives
    ``N_{k+1} = N_k' q² + 4 k s N_k q - 2 w² s N_k``.
    """
    w2 = width * width
    q = Polynomial([w2, 0.0, -1.0])
    s = Polynomial([0.0, 1.0])
    nums = [Polynomial([1.0])]
    for k in range(kmax):
        nk = nums[-1]
        nums.append(nk.deriv() * q * q + 4 * k * s * nk * q - 2 * w2 * s * nk)
    return nums


@dataclass(frozen=True)
class TestFunction:
    """Compactly supported smooth test function on ``[a, b]``.

    Parameters
    ----------
    support : tuple of float
        Interval ``(a, b)`` with ``a < b``.
    kind : {"bump", "poly_bump"}
        Plain bump or bump times a polynomial factor.
    poly : tuple of float, optional
        Coefficients (increasing degree) of the polynomial factor ``P(t)``,
        used when ``kind == "poly_bump"``.
    amplitude : float, optional
        Overall scale ``s``.
    """

    __test__ = False  # not a pytest class despite the name

    support: tuple[float, float]
    kind: str = "bump"
    poly: tuple[float, ...] = (1.0,)
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        a, b = (float(v) for v in self.support)
        if not a < b:
            raise ValueError(f"support must satisfy a < b, got {self.support}")
        if self.kind not in ("bump", "poly_bump"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        object.__setattr__(self, "support", (a, b))
        poly = tuple(float(c) for c in self.poly) if self.kind == "poly_bump" else (1.0,)
        object.__setattr__(self, "poly", poly)
        object.__setattr__(self, "amplitude", float(self.amplitude))

    @property
    def center(self) -> float:
        return 0.5 * (self.support[0] + self.support[1])

    @property
    def width(self) -> float:
        """Half-length ``w`` of the support."""
        return 0.5 * (self.support[1] - self.support[0])

    @cached_property
    def _numerators(self) -> list[Polynomial]:
        return _bump_numerators(self.width, MAX_DERIVATIVE)

    def _bump_derivative(self, t: np.ndarray, k: int) -> np.ndarray:
        s = t - self.center
        w2 = self.width**2
        q = w2 - s * s
        out = np.zeros_like(t)
        inside = q > 0
        if not np.any(inside):
            return out
        si, qi = s[inside], q[inside]
        g = -w2 / qi - 2 * k * np.log(qi)
        vals = np.zeros_like(si)
        ok = -w2 / qi > _EXP_FLOOR
        vals[ok] = self._numerators[k](si[ok]) * np.exp(g[ok])
        out[inside] = vals
        return out

    def derivative(self, t: np.ndarray | float, k: int = 0) -> np.ndarray | float:
        """``φ^{(k)}(t)``, exactly zero outside the support.

        Raises
        ------
        ValueError
            If ``k`` is negative or exceeds :data:`MAX_DERIVATIVE`.
        """
        if not 0 <= k <= MAX_DERIVATIVE:
            raise ValueError(f"derivative order must be in [0, {MAX_DERIVATIVE}], got {k}")
        arr = np.asarray(t, dtype=float)
        flat = np.atleast_1d(arr).ravel()
        if self.kind == "bump":
            vals = self._bump_derivative(flat, k)
        else:
            P = Polynomial(self.poly)
            vals = np.zeros_like(flat)
            for j in range(k + 1):
                vals += math.comb(k, j) * P.deriv(j)(flat) * self._bump_derivative(flat, k - j)
        vals = self.amplitude * vals
        if arr.ndim == 0:
            return float(vals[0])
        return vals.reshape(arr.shape)

    def __call__(self, t: np.ndarray | float) -> np.ndarray | float:
        return self.derivative(t, 0)

    def scaled(self, s: float) -> "TestFunction":
        return TestFunction(self.support, self.kind, self.poly, self.amplitude * s)

    def shifted(self, c: float) -> "TestFunction":
        """``t ↦ φ(t + c)``, supported on ``[a - c, b - c]``."""
        a, b = self.support
        poly = Polynomial(self.poly)
        if self.kind == "poly_bump":
            # P(t + c) as a polynomial in t.
            shifted = poly(Polynomial([c, 1.0]))
            coef = tuple(shifted.coef)
        else:
            coef = self.poly
        return TestFunction((a - c, b - c), self.kind, coef, self.amplitude)

    def to_dict(self) -> dict:
        out = {"support": list(self.support), "kind": self.kind, "amplitude": self.amplitude}
        if self.kind == "poly_bump":
            out["poly"] = list(self.poly)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TestFunction":
        return cls(
            tuple(data["support"]),
            data.get("kind", "bump"),
            tuple(data.get("poly", (1.0,))),
            float(data.get("amplitude", 1.0)),
        )


def test_function_eval(phi: TestFunction, t: np.ndarray | float, k: int = 0):
    """``φ^{(k)}(t)`` for ``0 <= k <= 5``; zero outside the support."""
    return phi.derivative(t, k)


test_function_eval.__test__ = False


# ---------------------------------------------------------------------------
# Complete problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemSpec:
    """Torus, magnetic field, scalar potential and test function."""

    domain: TorusDomain
    B: MagneticField
    V: ScalarField
    phi: TestFunction

    def __post_init__(self) -> None:
        if self.B.d != self.domain.d or self.V.d != self.domain.d:
            raise ValueError("field dimensions must match the domain")

    @cached_property
    def A(self) -> VectorPotential:
        return VectorPotential.from_field(self.B)

    @property
    def max_wavenumber(self) -> int:
        return max(self.B.max_wavenumber, self.V.max_wavenumber)


def modes_from_list(entries: Iterable[Sequence]) -> tuple:
    """Convenience: ``[(k, a, b), ...]`` as a tuple of mode triples."""
    return tuple((tuple(k), float(a), float(b)) for k, a, b in entries)
