"""
Conserved and dissipated functionals of the gauged equation

    i dv/dt = lap v - 2 grad A . grad v + V v - lam e^{-pA} v |v|^p

evaluated with spectral derivatives and the periodic rectangle rule.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sfft
from scipy import integrate as sint
from scipy import stats

from app.core.errors import UsageError
from app.models.models import AuditReport, NormKind, NormSpec
from app.services.gauge import GaugeContext
from app.services.lp_besov import norm
from app.services.spectral_grid import Field, PHYSICAL, k_squared, odd_multipliers, require_tag

# Configure logging
logger = logging.getLogger(__name__)

FLOOR_FACTOR = 1e-14
LEDGER_COLUMNS = (
    "time", "mass", "h1_energy", "modified_energy", "laplacian_term",
    "f_term", "g_term", "h_term", "h_integral",
)
DEFAULT_DIAGNOSTICS = (
    NormSpec(kind=NormKind.SOBOLEV_HS, alpha=2.0, mu=-0.25),
    NormSpec(kind=NormKind.SOBOLEV_HS, alpha=1.5, mu=0.1),
    NormSpec(kind=NormKind.LEBESGUE, p=2.0, mu=-0.25),
)


@dataclass
class LedgerRow:
    time: float
    mass: float
    h1_energy: float
    modified_energy: float
    laplacian_term: float
    f_term: float
    g_term: float
    h_term: float
    h_integral: float = 0.0

    def values(self) -> Tuple[float, ...]:
        return tuple(getattr(self, name) for name in LEDGER_COLUMNS)


@dataclass
class EnergyLedger:
    """Rows sampled along a trajectory; the H integral is accumulated by the trapezoid rule."""

    rows: List[LedgerRow] = field(default_factory=list)

    def append(self, row: LedgerRow) -> LedgerRow:
        if not all(math.isfinite(x) for x in row.values()[:-1]):
            raise UsageError(f"non-finite ledger entry at t={row.time}")
        if self.rows:
            last = self.rows[-1]
            if row.time <= last.time:
                raise UsageError(f"ledger times must increase ({row.time} after {last.time})")
            row.h_integral = last.h_integral + 0.5 * (row.time - last.time) * (row.h_term + last.h_term)
        else:
            row.h_integral = 0.0
        self.rows.append(row)
        return row

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows], dtype=float)

    def as_records(self) -> List[Dict[str, float]]:
        return [asdict(row) for row in self.rows]

    def __len__(self) -> int:
        return len(self.rows)


class _Derivatives:
    """Spectral derivatives of v shared by all functionals at one time."""

    def __init__(self, v: Field):
        require_tag(v, PHYSICAL)
        grid = v.grid
        m1, m2 = odd_multipliers(grid)
        spectrum = sfft.fft2(v.values, norm="ortho")
        self.v = v.values
        self.d1 = sfft.ifft2(m1 * spectrum, norm="ortho")
        self.d2 = sfft.ifft2(m2 * spectrum, norm="ortho")
        self.lap = sfft.ifft2(-k_squared(grid) * spectrum, norm="ortho")
        self.abs_sq = np.abs(self.v) ** 2
        self.grad_sq = np.abs(self.d1) ** 2 + np.abs(self.d2) ** 2
        top = float(np.max(self.abs_sq))
        self.floor = FLOOR_FACTOR * top

    def power(self, q: float) -> np.ndarray:
        """(|v|^2 + floor)^{q/2}; exact |v|^q for q >= 0."""
        if q >= 0:
            return self.abs_sq ** (q / 2.0)
        if self.floor == 0:
            return np.zeros_like(self.abs_sq)
        return (self.abs_sq + self.floor) ** (q / 2.0)


class _Gauge:
    """Gauge-dependent arrays: grad A, e^{-2A}, e^{-(p+2)A}."""

    def __init__(self, ctx: GaugeContext, p: float):
        grid = ctx.grid
        m1, m2 = odd_multipliers(grid)
        a_spec = sfft.fft2(ctx.A.values, norm="ortho")
        self.a1 = sfft.ifft2(m1 * a_spec, norm="ortho").real
        self.a2 = sfft.ifft2(m2 * a_spec, norm="ortho").real
        self.V = ctx.V.values.real
        self.e2 = ctx.exp_minus.values.real ** 2
        self.ep2 = self.e2 * ctx.exp_minus_p.values.real
        self.exp_minus_p = ctx.exp_minus_p.values.real
        self.h2 = grid.spacing ** 2


def _check(v: Field, ctx: GaugeContext) -> None:
    require_tag(v, PHYSICAL)
    if v.grid != ctx.grid:
        raise UsageError(f"grid mismatch: field on {v.grid.label()}, context on {ctx.grid.label()}")


def _integral(g: _Gauge, integrand: np.ndarray) -> float:
    return float(g.h2 * np.sum(integrand.real))


def mass(v: Field, ctx: GaugeContext) -> float:
    """int |v|^2 e^{-2A}."""
    _check(v, ctx)
    return float(v.grid.spacing ** 2 * np.sum(np.abs(v.values) ** 2 * ctx.exp_minus.values.real ** 2))


def h1_energy(v: Field, ctx: GaugeContext, lam: float, p: float) -> float:
    """1/2 int |grad v|^2 e^{-2A} - 1/2 int V |v|^2 e^{-2A} + lam/(p+2) int |v|^{p+2} e^{-(p+2)A}."""
    _check(v, ctx)
    d = _Derivatives(v)
    g = _Gauge(ctx, p)
    return (0.5 * _integral(g, d.grad_sq * g.e2)
            - 0.5 * _integral(g, g.V * d.abs_sq * g.e2)
            + lam / (p + 2.0) * _integral(g, d.power(p + 2.0) * g.ep2))


def linear_h1_quantity(v: Field, ctx: GaugeContext) -> float:
    """int |grad v|^2 e^{-2A} - int V |v|^2 e^{-2A}, conserved by the linear flow."""
    _check(v, ctx)
    d = _Derivatives(v)
    g = _Gauge(ctx, ctx.p)
    return _integral(g, (d.grad_sq - g.V * d.abs_sq) * g.e2)


def linear_l2_quantity(v: Field, ctx: GaugeContext) -> float:
    return mass(v, ctx)


def _rhs(d: _Derivatives, g: _Gauge, lam: float, p: float) -> np.ndarray:
    drift = g.a1 * d.d1 + g.a2 * d.d2
    return -1j * (d.lap - 2.0 * drift + g.V * d.v - lam * g.exp_minus_p * d.v * d.power(p))


def time_derivative(v: Field, ctx: GaugeContext, lam: float, p: float) -> Field:
    """dv/dt read off the right side of the gauged equation."""
    _check(v, ctx)
    return v.with_values(_rhs(_Derivatives(v), _Gauge(ctx, p), lam, p))


def _f_functional(d: _Derivatives, g: _Gauge) -> float:
    drift = g.a1 * d.d1 + g.a2 * d.d2
    terms = (
        -4.0 * (d.lap * np.conj(drift)).real
        + 4.0 * np.abs(drift) ** 2
        - 4.0 * g.V * (d.v * np.conj(drift)).real
        + 2.0 * g.V * (d.lap * np.conj(d.v)).real
        + g.V ** 2 * d.abs_sq
    )
    return _integral(g, terms * g.e2)


def _abs_sq_gradient(d: _Derivatives) -> Tuple[np.ndarray, np.ndarray]:
    return 2.0 * (np.conj(d.v) * d.d1).real, 2.0 * (np.conj(d.v) * d.d2).real


def _g_functional(d: _Derivatives, g: _Gauge, p: float) -> float:
    s1, s2 = _abs_sq_gradient(d)
    pw_p = d.power(p)
    pw_pm2 = d.power(p - 2.0)
    grad_pw1, grad_pw2 = 0.5 * p * pw_pm2 * s1, 0.5 * p * pw_pm2 * s2
    drift_conj = g.a1 * np.conj(d.d1) + g.a2 * np.conj(d.d2)
    terms = (
        -d.grad_sq * pw_p
        - 2.0 * (d.v * (grad_pw1 * np.conj(d.d1) + grad_pw2 * np.conj(d.d2))).real
        + 0.25 * p * (s1 ** 2 + s2 ** 2) * pw_pm2
        + 2.0 / (p + 2.0) * d.power(p + 2.0) * g.V
        + 2.0 * p * (d.v * pw_p * drift_conj).real
    )
    return _integral(g, terms * g.ep2)


def _h_functional(d: _Derivatives, g: _Gauge, dv: np.ndarray, p: float) -> float:
    s1, s2 = _abs_sq_gradient(d)
    pw_p = d.power(p)
    pw_pm2 = d.power(p - 2.0)
    re_vdv = (np.conj(d.v) * dv).real
    dt_pw_p = p * pw_pm2 * re_vdv
    dt_pw_pm2 = (p - 2.0) * d.power(p - 4.0) * re_vdv
    grad_pw1, grad_pw2 = 0.5 * p * pw_pm2 * s1, 0.5 * p * pw_pm2 * s2
    drift_conj = g.a1 * np.conj(d.d1) + g.a2 * np.conj(d.d2)
    terms = (
        -d.grad_sq * dt_pw_p
        - 2.0 * (dv * (grad_pw1 * np.conj(d.d1) + grad_pw2 * np.conj(d.d2))).real
        - 0.25 * p * (s1 ** 2 + s2 ** 2) * dt_pw_pm2
        + 2.0 * p * ((dv * pw_p + d.v * dt_pw_p) * drift_conj).real
    )
    return _integral(g, terms * g.ep2)


def modified_energy(v: Field, dv_dt: Optional[Field], ctx: GaugeContext, lam: float, p: float,
                    time: float = 0.0) -> LedgerRow:
    """
    Evaluate the modified energy E = int |lap v|^2 e^{-2A} + F - lam G and the rate H.

    Args:
        v: Gauged field
        dv_dt: Time derivative of v; computed from the equation when None
        ctx: Gauge context supplying A and V
        lam: Nonlinearity strength
        p: Nonlinearity power
        time: Time stamp of the row

    Returns:
        LedgerRow with every component; dE/dt = -lam H along exact solutions
    """
    _check(v, ctx)
    d = _Derivatives(v)
    g = _Gauge(ctx, p)
    dv = _rhs(d, g, lam, p) if dv_dt is None else dv_dt.values
    lap_term = _integral(g, np.abs(d.lap) ** 2 * g.e2)
    f_term = _f_functional(d, g)
    g_term = _g_functional(d, g, p)
    h_term = _h_functional(d, g, dv, p)
    h1 = (0.5 * _integral(g, d.grad_sq * g.e2) - 0.5 * _integral(g, g.V * d.abs_sq * g.e2)
          + lam / (p + 2.0) * _integral(g, d.power(p + 2.0) * g.ep2))
    return LedgerRow(
        time=float(time),
        mass=_integral(g, d.abs_sq * g.e2),
        h1_energy=h1,
        modified_energy=lap_term + f_term - lam * g_term,
        laplacian_term=lap_term,
        f_term=f_term,
        g_term=g_term,
        h_term=h_term,
    )


def ledger_row(v: Field, ctx: GaugeContext, lam: float, p: float, time: float) -> LedgerRow:
    return modified_energy(v, None, ctx, lam, p, time)


def audit_residuals(times: Sequence[float], energies: Sequence[float], h_values: Sequence[float],
                    lam: float) -> np.ndarray:
    """R(t) = E(t) - E(t0) + lam * int_{t0}^{t} H, trapezoid in time."""
    times = np.asarray(times, dtype=float)
    energies = np.asarray(energies, dtype=float)
    integral = sint.cumulative_trapezoid(np.asarray(h_values, dtype=float), times, initial=0.0)
    return energies - energies[0] + lam * integral


def energy_audit(traj, ctx: GaugeContext, lam: float, p: float) -> AuditReport:
    """
    Audit dE/dt = -lam H along a trajectory.

    Uses the trajectory's ledger when it has one, otherwise evaluates rows at every snapshot.
    """
    ledger = traj.ledger
    if ledger is None or len(ledger) != len(traj.times):
        ledger = EnergyLedger()
        for t, v in zip(traj.times, traj.snapshots):
            ledger.append(ledger_row(v, ctx, lam, p, t))
    times = ledger.column("time")
    energies = ledger.column("modified_energy")
    residuals = audit_residuals(times, energies, ledger.column("h_term"), lam)
    e0 = max(abs(energies[0]), 1.0)
    normalized = np.abs(residuals) / e0
    return AuditReport(
        lam=lam, p=p, dt=float(traj.config.dt), times=times.tolist(), residuals=normalized.tolist(),
        max_residual=float(np.max(normalized)), initial_energy=float(energies[0]),
        passed=bool(np.max(normalized) < 1e-3),
    )


def weighted_diagnostics(v: Field, specs: Optional[Sequence[NormSpec]] = None) -> Dict[str, float]:
    """Norms of v for each NormSpec, keyed by its label."""
    specs = DEFAULT_DIAGNOSTICS if specs is None else specs
    return {spec.label(): norm(v, spec) for spec in specs}


def fit_log_growth(eps_list: Sequence[float], values: Sequence[float]) -> Optional[float]:
    """Exponent C in value ~ |ln eps|^C."""
    pairs = [(math.log(abs(math.log(e))), math.log(v)) for e, v in zip(eps_list, values) if v > 0]
    if len(pairs) < 2:
        return None
    x, y = zip(*pairs)
    return float(stats.linregress(x, y).slope)
