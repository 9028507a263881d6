from __future__ import annotations

import math
from typing import Callable

import numpy as np
import pytest

from app.models.models import GridSpec
from app.services.gauge import GaugeContext, context_from_potentials
from app.services.spectral_grid import Field, from_function, zeros


def _trig(grid: GridSpec) -> float:
    return 2.0 * math.pi / grid.box_length


@pytest.fixture
def torus16() -> GridSpec:
    return GridSpec(box_length=2.0 * math.pi, points_per_side=16)


@pytest.fixture
def torus32() -> GridSpec:
    return GridSpec(box_length=2.0 * math.pi, points_per_side=32)


@pytest.fixture
def box64() -> GridSpec:
    """L = 4, h = 1/16: resolves eps >= 1/4."""
    return GridSpec(box_length=4.0, points_per_side=64)


@pytest.fixture
def trig_context() -> Callable[..., GaugeContext]:
    """Factory for a periodic, analytic gauge A and potential V; products stay resolved on small grids."""

    def build(grid: GridSpec, p: float = 2.0, c_eps: float = 0.0) -> GaugeContext:
        s = _trig(grid)
        A = from_function(grid, lambda x1, x2: 0.2 * np.cos(s * x1) + 0.1 * np.sin(s * x2))
        V = from_function(grid, lambda x1, x2: 0.5 * np.cos(s * (x1 + x2)) - 0.3)
        return context_from_potentials(A, V, p, c_eps)

    return build


@pytest.fixture
def flat_context() -> Callable[[GridSpec], GaugeContext]:
    """A = 0, V = 0."""

    def build(grid: GridSpec, p: float = 2.0) -> GaugeContext:
        return context_from_potentials(zeros(grid), zeros(grid), p)

    return build


@pytest.fixture
def trig_datum() -> Callable[[GridSpec], Field]:
    """Nonvanishing analytic datum, |v| >= 0.7."""

    def build(grid: GridSpec) -> Field:
        s = _trig(grid)
        return from_function(grid, lambda x1, x2: 1.2 + 0.5 * np.cos(s * x1) + 0.3j * np.sin(s * x2))

    return build


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240917)
