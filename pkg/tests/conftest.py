"""Shared problem data for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest

from semitrace.model import MagneticField, ProblemSpec, ScalarField, TestFunction, TorusDomain

UNIT = (1.0, 1.0)
TWO_PI = (2 * math.pi, 2 * math.pi)


def generic_field(periods=UNIT, strength: float = 2.0) -> MagneticField:
    """Zero-flux planar field with two modes."""
    b = ScalarField(periods, (((1, 0), strength, 0.0), ((1, 1), 0.0, 0.5 * strength)))
    return MagneticField.planar(b)


def generic_potential(periods=UNIT, scale: float = 3.0) -> ScalarField:
    """Positive potential with three modes."""
    return ScalarField(
        periods,
        (((1, 0), 0.5 * scale, 0.0), ((0, 1), 0.0, 0.3 * scale), ((1, -1), 0.2 * scale, 0.0)),
        scale,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def field_2d() -> MagneticField:
    return generic_field()


@pytest.fixture
def potential_2d() -> ScalarField:
    return generic_potential()


@pytest.fixture
def field_3d() -> MagneticField:
    """Closed zero-flux field in three dimensions (curl of a periodic potential)."""
    P = (1.0, 1.0, 1.0)
    from semitrace.model import VectorPotential

    A = VectorPotential(
        (
            ScalarField(P, (((0, 1, 0), 0.7, 0.0), ((0, 0, 1), 0.0, 0.4))),
            ScalarField(P, (((1, 0, 1), 0.5, 0.2),)),
            ScalarField(P, (((1, 1, 0), 0.0, 0.6),)),
        )
    )
    return MagneticField.from_potential(A)


@pytest.fixture
def small_problem(field_2d, potential_2d) -> ProblemSpec:
    return ProblemSpec(TorusDomain(2, UNIT, 16), field_2d, potential_2d, TestFunction((-200.0, 11.0)))
