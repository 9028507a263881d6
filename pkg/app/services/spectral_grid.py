"""
Periodic box discretization: fields, unitary FFTs, spectral derivatives and quadrature.

Field values are indexed [j1, j2] with x = (-L/2 + j1*h, -L/2 + j2*h). Transforms use the
orthonormal DFT, so the L2 quadrature h^2 * sum|f|^2 equals h^2 * sum|f_hat|^2.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Tuple, Union

import numpy as np
from scipy import fft as sfft

from app.core.errors import UsageError
from app.models.models import GridSpec

# Configure logging
logger = logging.getLogger(__name__)

PHYSICAL = "physical"
SPECTRAL = "spectral"


@dataclass(frozen=True, eq=False)
class Field:
    """An immutable complex field on a GridSpec, tagged physical or spectral."""

    grid: GridSpec
    values: np.ndarray
    tag: str = PHYSICAL

    def __post_init__(self):
        if self.tag not in (PHYSICAL, SPECTRAL):
            raise UsageError(f"unknown field tag {self.tag!r}")
        values = np.array(self.values, dtype=np.complex128, copy=True)
        if values.shape != self.grid.shape:
            raise UsageError(f"field shape {values.shape} does not match grid {self.grid.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values, self.tag)

    def real_part(self) -> "Field":
        return Field(self.grid, self.values.real, self.tag)

    def abs_max(self) -> float:
        return float(np.max(np.abs(self.values)))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def _operand(self, other) -> Union[np.ndarray, complex]:
        if isinstance(other, Field):
            require_compatible(self, other)
            return other.values
        return other

    def __add__(self, other):
        return self.with_values(self.values + self._operand(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.with_values(self.values - self._operand(other))

    def __rsub__(self, other):
        return self.with_values(self._operand(other) - self.values)

    def __mul__(self, other):
        if isinstance(other, Field) and (self.tag != PHYSICAL or other.tag != PHYSICAL):
            raise UsageError("pointwise products are defined on physical fields only")
        return self.with_values(self.values * self._operand(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def require_compatible(a: Field, b: Field) -> None:
    if a.grid != b.grid:
        raise UsageError(f"grid mismatch: {a.grid.label()} vs {b.grid.label()}")
    if a.tag != b.tag:
        raise UsageError(f"tag mismatch: {a.tag} vs {b.tag}")


def require_tag(f: Field, tag: str) -> None:
    if f.tag != tag:
        raise UsageError(f"expected a {tag} field, got {f.tag}")


@lru_cache(maxsize=32)
def _axes(grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    n, h = grid.points_per_side, grid.spacing
    x = -grid.box_length / 2 + h * np.arange(n)
    k = 2 * np.pi * sfft.fftfreq(n, d=h)
    return x, k


def coordinates(grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Sample points (X1, X2) as ij-indexed arrays."""
    x, _ = _axes(grid)
    return np.meshgrid(x, x, indexing="ij")


def wavenumbers(grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Frequency lattice (K1, K2) in FFT order, spacing 2*pi/L."""
    _, k = _axes(grid)
    return np.meshgrid(k, k, indexing="ij")


@lru_cache(maxsize=32)
def _k_squared(grid: GridSpec) -> np.ndarray:
    k1, k2 = wavenumbers(grid)
    ksq = k1 ** 2 + k2 ** 2
    ksq.setflags(write=False)
    return ksq


def k_squared(grid: GridSpec) -> np.ndarray:
    return _k_squared(grid)


@lru_cache(maxsize=32)
def _odd_multipliers(grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    # i*k with the Nyquist row/column zeroed so real fields stay real
    n = grid.points_per_side
    k1, k2 = wavenumbers(grid)
    m1, m2 = 1j * k1, 1j * k2
    m1[n // 2, :] = 0.0
    m2[:, n // 2] = 0.0
    m1.setflags(write=False)
    m2.setflags(write=False)
    return m1, m2


def odd_multipliers(grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    return _odd_multipliers(grid)


def forward_transform(f: Field) -> Field:
    """Unitary DFT of a physical field."""
    require_tag(f, PHYSICAL)
    return Field(f.grid, sfft.fft2(f.values, norm="ortho"), SPECTRAL)


def inverse_transform(f_hat: Field) -> Field:
    """Unitary inverse DFT of a spectral field."""
    require_tag(f_hat, SPECTRAL)
    return Field(f_hat.grid, sfft.ifft2(f_hat.values, norm="ortho"), PHYSICAL)


def apply_multiplier(f: Field, multiplier: np.ndarray) -> Field:
    """Apply a Fourier multiplier; the result keeps the tag of the input."""
    if f.tag == SPECTRAL:
        return f.with_values(f.values * multiplier)
    spectrum = sfft.fft2(f.values, norm="ortho") * multiplier
    return f.with_values(sfft.ifft2(spectrum, norm="ortho"))


def gradient(f: Field) -> Tuple[Field, Field]:
    m1, m2 = odd_multipliers(f.grid)
    if f.tag == SPECTRAL:
        return f.with_values(f.values * m1), f.with_values(f.values * m2)
    spectrum = sfft.fft2(f.values, norm="ortho")
    return (f.with_values(sfft.ifft2(spectrum * m1, norm="ortho")),
            f.with_values(sfft.ifft2(spectrum * m2, norm="ortho")))


def divergence(f1: Field, f2: Field) -> Field:
    require_compatible(f1, f2)
    m1, m2 = odd_multipliers(f1.grid)
    if f1.tag == SPECTRAL:
        return f1.with_values(f1.values * m1 + f2.values * m2)
    spectrum = sfft.fft2(f1.values, norm="ortho") * m1 + sfft.fft2(f2.values, norm="ortho") * m2
    return f1.with_values(sfft.ifft2(spectrum, norm="ortho"))


def laplacian(f: Field) -> Field:
    """Spectral Laplacian, multiplier -|k|^2 (Nyquist modes kept)."""
    return apply_multiplier(f, -k_squared(f.grid))


def integrate(f: Field) -> complex:
    """Periodic rectangle rule h^2 * sum f."""
    require_tag(f, PHYSICAL)
    return complex(f.grid.spacing ** 2 * np.sum(f.values))


def l2_norm(f: Field) -> float:
    return float(np.sqrt(f.grid.spacing ** 2 * np.sum(np.abs(f.values) ** 2)))


def spectral_energy(f_hat: Field) -> float:
    """h^2 * sum |f_hat|^2; equals l2_norm(f)^2 for the unitary transform."""
    require_tag(f_hat, SPECTRAL)
    return float(f_hat.grid.spacing ** 2 * np.sum(np.abs(f_hat.values) ** 2))


def translate(f: Field, shift: Tuple[int, int]) -> Field:
    """Shift a physical field by whole grid cells (periodic index rotation)."""
    require_tag(f, PHYSICAL)
    return f.with_values(np.roll(f.values, shift, axis=(0, 1)))


def from_function(grid: GridSpec, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> Field:
    x1, x2 = coordinates(grid)
    return Field(grid, np.broadcast_to(fn(x1, x2), grid.shape))


def constant(grid: GridSpec, value: complex) -> Field:
    return Field(grid, np.full(grid.shape, value, dtype=np.complex128))


def zeros(grid: GridSpec) -> Field:
    return constant(grid, 0.0)


def plane_wave(grid: GridSpec, m1: int, m2: int) -> Field:
    """e^{i k.x} for the lattice frequency k = (2*pi/L)(m1, m2)."""
    scale = 2 * np.pi / grid.box_length
    return from_function(grid, lambda x1, x2: np.exp(1j * scale * (m1 * x1 + m2 * x2)))


def gaussian(grid: GridSpec, width: float = 1.0, center: Tuple[float, float] = (0.0, 0.0)) -> Field:
    """exp(-|x - center|^2 / width^2)."""
    return from_function(
        grid, lambda x1, x2: np.exp(-((x1 - center[0]) ** 2 + (x2 - center[1]) ** 2) / width ** 2)
    )


def dealias_filter(grid: GridSpec) -> np.ndarray:
    """2/3-rule mask: keep |k_i| <= (2/3) k_max on both axes."""
    k1, k2 = wavenumbers(grid)
    cut = 2.0 / 3.0 * grid.k_max
    return ((np.abs(k1) <= cut) & (np.abs(k2) <= cut)).astype(float)
