"""
Time integration of the renormalized equation.

The primary scheme marches the primitive unknown w = e^{-Y_eps} v with Strang splitting of

    i dw/dt = lap w + (xi_eps - c_eps) w - lam |w|^p w

where both phase half steps are exact (|w| is invariant under them) and the linear step is the
spectral multiplier exp(i dt |k|^2). A classical RK4 on the gauged equation and a DOP853 dense
integrator of the semi-discrete w system serve as cross-checks.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import fft as sfft
from scipy import integrate as sint

from app.core import config as settings
from app.core.errors import ConfigurationError, IntegratorAbort, UsageError
from app.models.models import Scheme, SimConfig
from app.services import energetics
from app.services.gauge import GaugeContext, build_context, from_primitive, to_primitive
from app.services.lp_besov import lebesgue_norm
from app.services.noise_field import NoiseBundle, build_bundle
from app.services.spectral_grid import Field, PHYSICAL, dealias_filter, k_squared, require_tag

# Configure logging
logger = logging.getLogger(__name__)

RK4_STABILITY_LIMIT = 2.0 * math.sqrt(2.0)


@dataclass
class Trajectory:
    """Snapshots of v at the configured cadence, with their energy ledger."""

    config: SimConfig
    times: List[float] = field(default_factory=list)
    snapshots: List[Field] = field(default_factory=list)
    ledger: Optional[energetics.EnergyLedger] = None
    bundle_manifest: Dict[str, object] = field(default_factory=dict)
    conservation: Dict[str, List[float]] = field(default_factory=dict)
    steps: int = 0
    wall_seconds: float = 0.0

    @property
    def final(self) -> Field:
        return self.snapshots[-1]


class StrangStepper:
    """
    One Strang step: half phase, linear multiplier, half phase.

    Args:
        ctx: Gauge context providing the primitive potential
        dt: Time step
        lam: Nonlinearity strength
        p: Nonlinearity power
        renormalize: Subtract c_eps from the potential
        dealias: Apply the 2/3-rule filter with the linear step
    """

    def __init__(self, ctx: GaugeContext, dt: float, lam: float, p: float,
                 renormalize: bool = True, dealias: bool = False):
        self.set_timestep(ctx, dt)
        self.lam = lam
        self.p = p
        self.potential = ctx.primitive_potential(renormalize).values.real
        if dealias:
            self.linear = self.linear * dealias_filter(ctx.grid)

    def set_timestep(self, ctx: GaugeContext, dt: float) -> None:
        self.dt = dt
        self.linear = np.exp(1j * dt * k_squared(ctx.grid))

    def phase(self, w: np.ndarray, tau: float) -> np.ndarray:
        if self.lam:
            return w * np.exp(-1j * tau * (self.potential - self.lam * np.abs(w) ** self.p))
        return w * np.exp(-1j * tau * self.potential)

    def __call__(self, w: np.ndarray) -> np.ndarray:
        w = self.phase(w, 0.5 * self.dt)
        w = sfft.ifft2(self.linear * sfft.fft2(w, norm="ortho"), norm="ortho")
        return self.phase(w, 0.5 * self.dt)


def _require_finite(values: np.ndarray, last_good: np.ndarray, grid, t: float) -> None:
    if not np.all(np.isfinite(values)):
        raise IntegratorAbort(f"non-finite values at t={t:.6g}", last_good=Field(grid, last_good), time=t)


def step_strang(w: Field, dt: float, ctx: GaugeContext, lam: float = 0.0,
                renormalize: bool = True, dealias: bool = False) -> Field:
    """Advance the primitive field by one Strang step."""
    require_tag(w, PHYSICAL)
    if w.grid != ctx.grid:
        raise UsageError(f"grid mismatch: field on {w.grid.label()}, context on {ctx.grid.label()}")
    stepper = StrangStepper(ctx, dt, lam, ctx.p, renormalize, dealias)
    out = stepper(w.values)
    _require_finite(out, w.values, w.grid, dt)
    return w.with_values(out)


def _resolve_context(config: SimConfig, bundle: Optional[NoiseBundle], context: Optional[GaugeContext],
                     xi: Optional[Field]) -> GaugeContext:
    if context is not None:
        if context.grid != config.grid:
            raise UsageError("context grid differs from the configured grid")
        return context
    if bundle is None:
        bundle = build_bundle(config.grid, config.seed, config.eps, config.stream, xi=xi)
    return build_context(bundle, config.p)


def _phase_heuristic(config: SimConfig, ctx: GaugeContext, w0: np.ndarray) -> None:
    potential = ctx.primitive_potential(config.renormalize).values.real
    measure = config.dt * (np.max(np.abs(potential)) + config.lam * np.max(np.abs(w0)) ** config.p)
    if measure >= 1.0:
        logger.warning(f"dt * (max|V| + lam max|w0|^p) = {measure:.3g} >= 1; phases are under-resolved")


def _snapshot_steps(config: SimConfig) -> List[int]:
    n_steps = config.steps
    marks = list(range(0, n_steps + 1, config.snapshot_every))
    if marks[-1] != n_steps:
        marks.append(n_steps)
    return marks


def _new_trajectory(config: SimConfig, ctx: GaugeContext, v0: Field, record_ledger: bool) -> Trajectory:
    traj = Trajectory(config=config, times=[0.0], snapshots=[v0])
    traj.bundle_manifest = ctx.bundle.manifest() if ctx.bundle is not None else {}
    if record_ledger:
        traj.ledger = energetics.EnergyLedger()
        traj.ledger.append(energetics.ledger_row(v0, ctx, config.lam, config.p, 0.0))
    return traj


def _record(traj: Trajectory, ctx: GaugeContext, v: Field, t: float) -> None:
    traj.times.append(t)
    traj.snapshots.append(v)
    if traj.ledger is not None:
        traj.ledger.append(energetics.ledger_row(v, ctx, traj.config.lam, traj.config.p, t))


def evolve(config: SimConfig, v0: Field, bundle: Optional[NoiseBundle] = None,
           context: Optional[GaugeContext] = None, xi: Optional[Field] = None,
           record_ledger: bool = True) -> Trajectory:
    """
    Integrate the gauged unknown from v0 to T with the configured scheme.

    Args:
        config: Simulation configuration
        v0: Initial datum on config.grid
        bundle: Pre-built noise bundle (built from seed/stream/eps when omitted)
        context: Explicit gauge context; takes precedence over bundle
        xi: Noise realization injected into the bundle
        record_ledger: Evaluate the energy ledger at every snapshot

    Returns:
        Trajectory of v snapshots
    """
    require_tag(v0, PHYSICAL)
    if v0.grid != config.grid:
        raise UsageError(f"datum grid {v0.grid.label()} differs from config grid {config.grid.label()}")
    if not v0.is_finite():
        raise UsageError("initial datum has non-finite values")
    ctx = _resolve_context(config, bundle, context, xi)
    if config.scheme is Scheme.DIRECT_V_RK4:
        return evolve_direct_v(config, v0, context=ctx, record_ledger=record_ledger)
    if config.scheme is Scheme.DENSE_ORACLE:
        return dense_oracle(config, v0, context=ctx, record_ledger=record_ledger)

    started = time.perf_counter()
    w = to_primitive(v0, ctx).values
    _phase_heuristic(config, ctx, w)
    stepper = StrangStepper(ctx, config.dt, config.lam, config.p, config.renormalize, config.dealias)
    traj = _new_trajectory(config, ctx, v0, record_ledger)
    marks = set(_snapshot_steps(config))
    logger.info(f"Evolving {config.steps} Strang steps on {config.grid.label()} eps={config.eps:g}")
    for step in range(1, config.steps + 1):
        w_next = stepper(w)
        if not np.all(np.isfinite(w_next)):
            raise IntegratorAbort(f"non-finite values at t={step * config.dt:.6g}",
                                  last_good=from_primitive(Field(ctx.grid, w), ctx), time=(step - 1) * config.dt)
        w = w_next
        if step in marks:
            _record(traj, ctx, from_primitive(Field(ctx.grid, w), ctx), step * config.dt)
    traj.steps = config.steps
    traj.wall_seconds = time.perf_counter() - started
    logger.info(f"Trajectory finished in {traj.wall_seconds:.2f}s")
    return traj


def _rk4_bound(config: SimConfig, ctx: GaugeContext, v0: Field) -> float:
    k_sq_max = float(np.max(k_squared(ctx.grid)))
    a_grad = np.abs(np.gradient(ctx.A.values.real, ctx.grid.spacing))
    grad_a = float(np.max(np.sqrt(a_grad[0] ** 2 + a_grad[1] ** 2)))
    nonlinear = config.lam * float(np.max(ctx.exp_minus_p.values.real)) * v0.abs_max() ** config.p
    potential = float(np.max(np.abs(ctx.V.values + _unrenormalized_shift(config, ctx))))
    return k_sq_max + 2.0 * grad_a * math.sqrt(k_sq_max) + potential + nonlinear


def _unrenormalized_shift(config: SimConfig, ctx: GaugeContext) -> float:
    """Without renormalization the gauged potential is V + c_eps."""
    return 0.0 if config.renormalize else ctx.c_eps


def evolve_direct_v(config: SimConfig, v0: Field, bundle: Optional[NoiseBundle] = None,
                    context: Optional[GaugeContext] = None, record_ledger: bool = True) -> Trajectory:
    """Classical RK4 on the gauged equation with spectral spatial operators."""
    ctx = _resolve_context(config, bundle, context, None)
    bound = config.dt * _rk4_bound(config, ctx, v0)
    if bound > RK4_STABILITY_LIMIT:
        raise IntegratorAbort(
            f"explicit RK4 unstable: dt * spectral bound = {bound:.3g} > {RK4_STABILITY_LIMIT:.3g}",
            last_good=v0, time=0.0,
        )
    started = time.perf_counter()
    lam, p, dt = config.lam, config.p, config.dt
    traj = _new_trajectory(config, ctx, v0, record_ledger)
    marks = set(_snapshot_steps(config))
    shift = _unrenormalized_shift(config, ctx)

    def rhs(values: np.ndarray) -> np.ndarray:
        return energetics.time_derivative(Field(ctx.grid, values), ctx, lam, p).values - 1j * shift * values

    v = v0.values
    for step in range(1, config.steps + 1):
        k1 = rhs(v)
        k2 = rhs(v + 0.5 * dt * k1)
        k3 = rhs(v + 0.5 * dt * k2)
        k4 = rhs(v + dt * k3)
        v_next = v + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        _require_finite(v_next, v, ctx.grid, step * dt)
        v = v_next
        if step in marks:
            _record(traj, ctx, Field(ctx.grid, v), step * dt)
    traj.steps = config.steps
    traj.wall_seconds = time.perf_counter() - started
    return traj


def dense_oracle(config: SimConfig, v0: Field, bundle: Optional[NoiseBundle] = None,
                 context: Optional[GaugeContext] = None, record_ledger: bool = False,
                 rtol: float = 1e-12) -> Trajectory:
    """High-order adaptive integration (DOP853) of the full semi-discrete primitive system."""
    ctx = _resolve_context(config, bundle, context, None)
    grid = ctx.grid
    if grid.points_per_side > settings.MAX_DENSE_N:
        logger.warning(f"Dense oracle on n={grid.points_per_side} exceeds SNLS_MAX_DENSE_N={settings.MAX_DENSE_N}")
    potential = ctx.primitive_potential(config.renormalize).values.real
    ksq = k_squared(grid)
    size = grid.points_per_side ** 2
    lam, p = config.lam, config.p

    def rhs(_t: float, y: np.ndarray) -> np.ndarray:
        w = (y[:size] + 1j * y[size:]).reshape(grid.shape)
        lap = sfft.ifft2(-ksq * sfft.fft2(w, norm="ortho"), norm="ortho")
        dw = -1j * (lap + potential * w - lam * np.abs(w) ** p * w)
        return np.concatenate([dw.real.ravel(), dw.imag.ravel()])

    w0 = to_primitive(v0, ctx).values
    y0 = np.concatenate([w0.real.ravel(), w0.imag.ravel()])
    marks = _snapshot_steps(config)
    t_eval = [m * config.dt for m in marks]
    started = time.perf_counter()
    solution = sint.solve_ivp(rhs, (0.0, t_eval[-1]), y0, method="DOP853", t_eval=t_eval,
                              rtol=rtol, atol=rtol * max(1.0, float(np.max(np.abs(w0)))))
    if not solution.success:
        raise IntegratorAbort(f"dense oracle failed: {solution.message}", last_good=v0, time=0.0)
    traj = _new_trajectory(config, ctx, v0, record_ledger)
    for t, y in zip(solution.t[1:], solution.y.T[1:]):
        w = (y[:size] + 1j * y[size:]).reshape(grid.shape)
        _record(traj, ctx, from_primitive(Field(grid, w), ctx), float(t))
    traj.steps = int(solution.nfev)
    traj.wall_seconds = time.perf_counter() - started
    return traj


def linear_propagate(config: SimConfig, phi: Field, bundle: Optional[NoiseBundle] = None,
                     context: Optional[GaugeContext] = None) -> Trajectory:
    """
    Linear propagator S(t) phi with A = Y_eps, V = the corrected potential.

    Both linear invariants are tracked in traj.conservation under 'l2' and 'h1'.
    """
    if config.lam != 0:
        raise ConfigurationError(f"linear propagation requires lam = 0, got {config.lam}")
    ctx = _resolve_context(config, bundle, context, None)
    traj = evolve(config, phi, context=ctx, record_ledger=False)
    traj.conservation = {
        "l2": [energetics.linear_l2_quantity(v, ctx) for v in traj.snapshots],
        "h1": [energetics.linear_h1_quantity(v, ctx) for v in traj.snapshots],
    }
    return traj


def relative_drift(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    scale = abs(values[0]) if values[0] != 0 else 1.0
    return float(np.max(np.abs(values - values[0])) / scale)


def strichartz_norm(traj: Trajectory, l: float, q: float, mu: float = 0.0) -> float:
    """Discrete L^l(0,T; L^q_mu) norm of the snapshots, trapezoid in time."""
    grid = traj.config.grid
    spatial = np.array([lebesgue_norm(v.values, grid, q, mu) for v in traj.snapshots])
    if math.isinf(l):
        return float(np.max(spatial))
    return float(sint.trapezoid(spatial ** l, traj.times) ** (1.0 / l))


def self_convergence(config: SimConfig, v0: Field, dts: Sequence[float], bundle: Optional[NoiseBundle] = None,
                     context: Optional[GaugeContext] = None) -> List[float]:
    """L2 distances at T between runs with successive time steps."""
    ctx = _resolve_context(config, bundle, context, None)
    finals = []
    for dt in dts:
        cfg = config.model_copy(update={"dt": dt, "snapshot_every": max(1, int(round(config.T / dt)))})
        finals.append(evolve(cfg, v0, context=ctx, record_ledger=False).final)
    return [lebesgue_norm(a.values - b.values, a.grid, 2.0) for a, b in zip(finals, finals[1:])]
