"""Sparse multivariate polynomials with complex coefficients.

A small dictionary-of-monomials type; enough algebra for building the
coefficients of polynomial differential operators (sums, products, partial
derivatives, evaluation) with exact bookkeeping of degrees.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

__all__ = ["Poly"]

Exponent = tuple[int, ...]


@dataclass(frozen=True)
class Poly:
    """Polynomial ``Σ c_α Z^α`` in ``d`` variables.

    Terms are stored as a tuple of ``(α, c)`` pairs sorted by exponent, with
    zero coefficients removed, so structurally equal polynomials compare
    equal.
    """

    d: int
    terms: tuple[tuple[Exponent, complex], ...] = ()

    def __post_init__(self) -> None:
        acc: dict[Exponent, complex] = {}
        for alpha, c in self.terms:
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.d or any(a < 0 for a in alpha):
                raise ValueError(f"invalid exponent {alpha} for d={self.d}")
            acc[alpha] = acc.get(alpha, 0.0) + complex(c)
        terms = tuple((a, c) for a, c in sorted(acc.items()) if c != 0)
        object.__setattr__(self, "terms", terms)

    # -- constructors ---------------------------------------------------------
    @classmethod
    def from_dict(cls, d: int, coeffs: Mapping[Exponent, complex]) -> "Poly":
        return cls(d, tuple(coeffs.items()))

    @classmethod
    def constant(cls, d: int, c: complex) -> "Poly":
        return cls(d, (((0,) * d, c),))

    @classmethod
    def variable(cls, d: int, j: int, c: complex = 1.0) -> "Poly":
        alpha = [0] * d
        alpha[j] = 1
        return cls(d, ((tuple(alpha), c),))

    @classmethod
    def zero(cls, d: int) -> "Poly":
        return cls(d)

    # -- properties -----------------------------------------------------------
    def as_dict(self) -> dict[Exponent, complex]:
        return dict(self.terms)

    @property
    def degree(self) -> int:
        """Total degree; ``-1`` for the zero polynomial."""
        return max((sum(a) for a, _ in self.terms), default=-1)

    @property
    def min_degree(self) -> int:
        return min((sum(a) for a, _ in self.terms), default=-1)

    def is_zero(self) -> bool:
        return not self.terms

    def is_homogeneous(self, r: int) -> bool:
        return all(sum(a) == r for a, _ in self.terms)

    def max_abs_coefficient(self) -> float:
        return max((abs(c) for _, c in self.terms), default=0.0)

    # -- algebra --------------------------------------------------------------
    def __add__(self, other: "Poly | complex") -> "Poly":
        if not isinstance(other, Poly):
            other = Poly.constant(self.d, other)
        return Poly(self.d, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self) -> "Poly":
        return Poly(self.d, tuple((a, -c) for a, c in self.terms))

    def __sub__(self, other: "Poly | complex") -> "Poly":
        return self + (-other if isinstance(other, Poly) else -complex(other))

    def __mul__(self, other: "Poly | complex") -> "Poly":
        if not isinstance(other, Poly):
            s = complex(other)
            return Poly(self.d, tuple((a, s * c) for a, c in self.terms))
        out = []
        for a, c in self.terms:
            for b, e in other.terms:
                out.append((tuple(x + y for x, y in zip(a, b)), c * e))
        return Poly(self.d, tuple(out))

    __rmul__ = __mul__

    def partial(self, j: int) -> "Poly":
        out = []
        for a, c in self.terms:
            if a[j]:
                b = list(a)
                b[j] -= 1
                out.append((tuple(b), c * a[j]))
        return Poly(self.d, tuple(out))

    def homogeneous_part(self, r: int) -> "Poly":
        return Poly(self.d, tuple((a, c) for a, c in self.terms if sum(a) == r))

    # -- evaluation -----------------------------------------------------------
    def __call__(self, Z: np.ndarray) -> np.ndarray | complex:
        """Evaluate at points ``Z`` of shape ``(..., d)``."""
        Z = np.asarray(Z, dtype=float)
        out = np.zeros(Z.shape[:-1], dtype=complex)
        for a, c in self.terms:
            out = out + c * np.prod(Z ** np.array(a), axis=-1)
        return out if out.ndim else complex(out)

    def distance(self, other: "Poly") -> float:
        """Largest coefficient of ``self - other``."""
        return (self - other).max_abs_coefficient()
