"""
Gauge dictionary between the original unknown u, the gauged unknown v = e^{Y_eps} u and the
primitive unknown w = e^{-Y_eps} v, plus the renormalizing phase e^{-i c_eps t}.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.core.errors import UsageError
from app.services.noise_field import NoiseBundle
from app.services.spectral_grid import Field, PHYSICAL, gradient, laplacian, require_tag

# Configure logging
logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GaugeContext:
    """
    Precomputed exponentials of the gauge A = Y_eps and the potentials of both equations.

    A and V are the weight exponent and the potential of the gauged equation; xi_eps - c_eps is
    the potential of the primitive one.
    """

    A: Field
    V: Field
    xi_eps: Field
    c_eps: float
    p: float
    exp_plus: Field
    exp_minus: Field
    exp_minus_p: Field
    bundle: Optional[NoiseBundle] = None

    @property
    def grid(self):
        return self.A.grid

    def primitive_potential(self, renormalize: bool = True) -> Field:
        """xi_eps - c_eps, or xi_eps alone for the unrenormalized flow."""
        return self.xi_eps - self.c_eps if renormalize else self.xi_eps


def _context(A: Field, V: Field, xi_eps: Field, c_eps: float, p: float,
             bundle: Optional[NoiseBundle] = None) -> GaugeContext:
    if p < 1:
        raise UsageError(f"nonlinearity power p must be >= 1, got {p}")
    a = A.values.real
    exp_minus = np.exp(-a)
    return GaugeContext(
        A=Field(A.grid, a), V=Field(V.grid, V.values.real), xi_eps=Field(xi_eps.grid, xi_eps.values.real),
        c_eps=float(c_eps), p=float(p),
        exp_plus=Field(A.grid, np.exp(a)), exp_minus=Field(A.grid, exp_minus),
        exp_minus_p=Field(A.grid, np.exp(-p * a)), bundle=bundle,
    )


def build_context(bundle: NoiseBundle, p: float) -> GaugeContext:
    """Context for the realization held by a noise bundle."""
    return _context(bundle.Y_eps, bundle.v_tilde, bundle.xi_eps, bundle.c_eps, p, bundle)


def context_from_potentials(A: Field, V: Field, p: float, c_eps: float = 0.0) -> GaugeContext:
    """
    Context for an arbitrary smooth gauge A and potential V.

    The primitive potential is reconstructed from V = |grad A|^2 - c - (lap A - xi) so that
    both equations stay equivalent.
    """
    require_tag(A, PHYSICAL)
    g1, g2 = gradient(A)
    grad_sq = np.abs(g1.values) ** 2 + np.abs(g2.values) ** 2
    xi_eps = V.values.real - grad_sq + laplacian(A).values.real + c_eps
    return _context(A, V, Field(A.grid, xi_eps), c_eps, p)


def _check(f: Field, ctx: GaugeContext) -> None:
    require_tag(f, PHYSICAL)
    if f.grid != ctx.grid:
        raise UsageError(f"grid mismatch: field on {f.grid.label()}, context on {ctx.grid.label()}")


def to_primitive(v: Field, ctx: GaugeContext) -> Field:
    """w = e^{-Y_eps} v."""
    _check(v, ctx)
    return v.with_values(v.values * ctx.exp_minus.values)


def from_primitive(w: Field, ctx: GaugeContext) -> Field:
    """v = e^{Y_eps} w."""
    _check(w, ctx)
    return w.with_values(w.values * ctx.exp_plus.values)


def to_original(v: Field, ctx: GaugeContext, t: float) -> Field:
    """u = e^{-i c_eps t} e^{-Y_eps} v."""
    _check(v, ctx)
    return v.with_values(np.exp(-1j * ctx.c_eps * t) * ctx.exp_minus.values * v.values)


def from_original(u: Field, ctx: GaugeContext, t: float) -> Field:
    """v = e^{i c_eps t} e^{Y_eps} u."""
    _check(u, ctx)
    return u.with_values(np.exp(1j * ctx.c_eps * t) * ctx.exp_plus.values * u.values)
