"""
One realization of the stochastic objects: white noise, its mollification, the log-correlated
field Y = G * xi, the Wick constant c_eps and the corrected potential.

Kernel transforms use the continuum convention K_hat = h^2 * FFT(K centred at index 0), so a
convolution is K_hat times the unitary transform of the field.
"""
import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from pydantic import ValidationError
from scipy import fft as sfft
from scipy import integrate, stats

from app.core.errors import ConfigurationError, StatisticsRefusedError, UnderResolvedError, UsageError
from app.models.models import GridSpec, MollifierSpec, NormKind, NormSpec, StochasticReport
from app.services.lp_besov import lebesgue_norm, norm, smooth_step
from app.services.spectral_grid import (
    Field,
    SPECTRAL,
    coordinates,
    k_squared,
    odd_multipliers,
    constant,
)

# Configure logging
logger = logging.getLogger(__name__)

MIN_CELLS_PER_EPS = 4
MIN_REALIZATIONS = 20
GREEN_INNER_RADIUS = 0.25
GREEN_OUTER_RADIUS = 0.5


def bump_profile(r) -> np.ndarray:
    """exp(-1/(1-r^2)) on r < 1, zero outside."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@lru_cache(maxsize=1)
def mollifier_normalization() -> float:
    """Z such that Z * exp(-1/(1-|x|^2)) integrates to one over the unit disc."""
    radial, _ = integrate.quad(lambda r: math.exp(-1.0 / (1.0 - r * r)) * r, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    return 1.0 / (2.0 * math.pi * radial)


def _radius(grid: GridSpec) -> np.ndarray:
    x1, x2 = coordinates(grid)
    return np.sqrt(x1 ** 2 + x2 ** 2)


def is_resolved(grid: GridSpec, eps: float) -> bool:
    return eps >= MIN_CELLS_PER_EPS * grid.spacing * (1 - 1e-12)


def require_resolved(grid: GridSpec, eps: float) -> MollifierSpec:
    """Validated mollifier spec for eps, refused unless the grid resolves it."""
    try:
        spec = MollifierSpec(epsilon=eps)
    except ValidationError as exc:
        raise ConfigurationError(f"eps must lie in (0, 1/2), got {eps}") from exc
    if not is_resolved(grid, spec.epsilon):
        raise UnderResolvedError(
            f"eps = {eps:g} is below {MIN_CELLS_PER_EPS}h = {MIN_CELLS_PER_EPS * grid.spacing:g} on {grid.label()}"
        )
    return spec


def mollifier_kernel(grid: GridSpec, eps: float) -> Field:
    """rho_eps sampled around the origin, rescaled so its quadrature is exactly one."""
    spec = require_resolved(grid, eps)
    values = mollifier_normalization() * bump_profile(_radius(grid) / spec.epsilon) / spec.epsilon ** 2
    values /= grid.spacing ** 2 * np.sum(values)
    return Field(grid, values)


def kernel_hat(kernel: Field) -> np.ndarray:
    """Continuum-normalized transform of a kernel sampled around the origin."""
    centred = sfft.ifftshift(kernel.values)
    return kernel.grid.spacing ** 2 * sfft.fft2(centred)


@lru_cache(maxsize=32)
def mollifier_hat(grid: GridSpec, eps: float) -> np.ndarray:
    rho_hat = kernel_hat(mollifier_kernel(grid, eps)).real
    rho_hat.setflags(write=False)
    return rho_hat


def green_cutoff(r) -> np.ndarray:
    """Smooth radial cutoff: 1 on r <= 1/4, 0 on r >= 1/2."""
    r = np.asarray(r, dtype=float)
    return smooth_step((GREEN_OUTER_RADIUS - r) / (GREEN_OUTER_RADIUS - GREEN_INNER_RADIUS))


def green_cell_average(h: float) -> float:
    """Mean of (1/2pi) log|x| over the square cell [-h/2, h/2]^2."""
    return (math.log(h / 2.0) + 0.5 * (math.log(2.0) + math.pi / 2.0 - 3.0)) / (2.0 * math.pi)


def truncated_green(grid: GridSpec) -> Field:
    """
    G(x) = (1/2pi) log|x| chi(|x|), sampled around the origin.

    The origin sample is the cell average of the logarithm. With this sign the Laplacian of G
    is the Dirac mass plus a smooth function supported in 1/4 <= |x| <= 1/2.
    """
    if grid.box_length <= 2.0:
        raise ConfigurationError(f"box length {grid.box_length:g} <= 2: the Green's function support would wrap")
    r = _radius(grid)
    values = np.zeros(grid.shape)
    positive = r > 0
    values[positive] = np.log(r[positive]) * green_cutoff(r[positive]) / (2.0 * math.pi)
    centre = grid.points_per_side // 2
    values[centre, centre] = green_cell_average(grid.spacing)
    return Field(grid, values)


@lru_cache(maxsize=16)
def green_hat(grid: GridSpec) -> np.ndarray:
    g_hat = kernel_hat(truncated_green(grid)).real
    g_hat.setflags(write=False)
    return g_hat


def sample_white_noise(grid: GridSpec, seed: int, stream: int = 0) -> Field:
    """Cell-averaged white noise xi_j = g_j / h with g_j iid standard normal."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))
    return Field(grid, rng.standard_normal(grid.shape) / grid.spacing)


def restrict_noise(xi: Field, coarse: GridSpec) -> Field:
    """
    Restrict a white-noise realization to a coarser grid on the same box.

    Continuum-normalized Fourier coefficients below the coarse Nyquist frequency are kept
    unchanged (they have the same law on every grid); coarse Nyquist modes are set to zero.
    """
    fine = xi.grid
    if abs(fine.box_length - coarse.box_length) > 1e-12 * fine.box_length:
        raise UsageError("restriction requires the same box length")
    nf, nc = fine.points_per_side, coarse.points_per_side
    if nc > nf:
        raise UsageError(f"cannot restrict from n={nf} to the finer n={nc}")
    spectrum = sfft.fftshift(fine.spacing ** 2 * sfft.fft2(xi.values))
    lo = nf // 2 - nc // 2
    window = spectrum[lo:lo + nc, lo:lo + nc].copy()
    window[0, :] = 0.0
    window[:, 0] = 0.0
    values = sfft.ifft2(sfft.ifftshift(window)) / coarse.spacing ** 2
    return Field(coarse, values.real)


@lru_cache(maxsize=64)
def compute_c_eps(grid: GridSpec, eps: float) -> float:
    """
    Wick constant E|grad Y_eps(x)|^2 of the discrete model.

    Equals (1/L^2) sum_k |m(k)|^2 |rho_hat_eps(k)|^2 |G_hat(k)|^2 with m the gradient multiplier,
    i.e. the discrete ||grad(rho_eps * G)||^2_{L^2}.
    """
    m1, m2 = odd_multipliers(grid)
    weight = (np.abs(m1) ** 2 + np.abs(m2) ** 2) * (mollifier_hat(grid, eps) * green_hat(grid)) ** 2
    return float(np.sum(weight) / grid.box_length ** 2)


def field_hash(f: Field) -> str:
    return hashlib.sha256(np.ascontiguousarray(f.values).tobytes()).hexdigest()


@dataclass(frozen=True, eq=False)
class NoiseBundle:
    """All stochastic fields of one realization at one mollification scale."""

    grid: GridSpec
    seed: int
    stream: int
    epsilon: float
    xi: Field
    xi_eps: Field
    Y: Field
    Y_eps: Field
    grad_Y_eps: Tuple[Field, Field]
    lap_Y_eps: Field
    c_eps: float
    wick: Field
    phi_xi_eps: Field
    v_tilde: Field
    green_hat: Field

    def manifest(self) -> Dict[str, object]:
        grad_abs = np.sqrt(np.abs(self.grad_Y_eps[0].values) ** 2 + np.abs(self.grad_Y_eps[1].values) ** 2)
        fields = {
            "xi": self.xi.values, "xi_eps": self.xi_eps.values, "Y": self.Y.values, "Y_eps": self.Y_eps.values,
            "grad_Y_eps": grad_abs, "wick": self.wick.values, "phi_xi_eps": self.phi_xi_eps.values,
            "v_tilde": self.v_tilde.values,
        }
        norms = {
            name: {"l2": lebesgue_norm(values, self.grid, 2.0), "sup": lebesgue_norm(values, self.grid, math.inf)}
            for name, values in fields.items()
        }
        return {
            "seed": self.seed, "stream": self.stream, "eps": self.epsilon,
            "grid": {"box_length": self.grid.box_length, "points_per_side": self.grid.points_per_side},
            "c_eps": self.c_eps, "xi_sha256": field_hash(self.xi), "norms": norms,
        }


def _real(grid: GridSpec, spectrum: np.ndarray) -> Field:
    return Field(grid, sfft.ifft2(spectrum, norm="ortho").real)


def build_bundle(grid: GridSpec, seed: int, eps: float, stream: int = 0, xi: Optional[Field] = None) -> NoiseBundle:
    """
    Build every stochastic field of one realization.

    Args:
        grid: Simulation grid
        seed: Master seed
        eps: Mollification scale, resolved by the grid (eps >= 4h)
        stream: Stream index of the realization
        xi: Optional noise realization to use instead of sampling one

    Returns:
        NoiseBundle
    """
    require_resolved(grid, eps)
    if xi is None:
        xi = sample_white_noise(grid, seed, stream)
    elif xi.grid != grid:
        raise UsageError(f"injected noise lives on {xi.grid.label()}, expected {grid.label()}")
    xi = xi.real_part()

    rho_hat = mollifier_hat(grid, eps)
    g_hat = green_hat(grid)
    xi_spec = sfft.fft2(xi.values, norm="ortho")
    y_eps_spec = rho_hat * g_hat * xi_spec
    m1, m2 = odd_multipliers(grid)

    c_eps = compute_c_eps(grid, eps)
    grad = (_real(grid, m1 * y_eps_spec), _real(grid, m2 * y_eps_spec))
    xi_eps = _real(grid, rho_hat * xi_spec)
    lap = _real(grid, -k_squared(grid) * y_eps_spec)
    wick = Field(grid, np.abs(grad[0].values) ** 2 + np.abs(grad[1].values) ** 2 - c_eps)
    phi_xi = Field(grid, lap.values.real - xi_eps.values.real)

    bundle = NoiseBundle(
        grid=grid, seed=seed, stream=stream, epsilon=eps,
        xi=xi, xi_eps=xi_eps, Y=_real(grid, g_hat * xi_spec), Y_eps=_real(grid, y_eps_spec),
        grad_Y_eps=grad, lap_Y_eps=lap, c_eps=c_eps, wick=wick, phi_xi_eps=phi_xi,
        v_tilde=Field(grid, wick.values.real - phi_xi.values.real),
        green_hat=Field(grid, g_hat, SPECTRAL),
    )
    logger.debug(f"Built noise bundle seed={seed} stream={stream} eps={eps:g} c_eps={c_eps:.6f}")
    return bundle


@lru_cache(maxsize=1)
def wick_slope_oracle() -> float:
    """d c_eps / d|ln eps| from the integral of |grad G|^2 over eps < |x| < 1/4."""
    r, eps, s = sp.symbols("r epsilon s", positive=True)
    grad_sq = (1 / (2 * sp.pi * r)) ** 2
    energy = sp.integrate(2 * sp.pi * r * grad_sq, (r, eps, sp.Rational(1, 4)))
    slope = sp.diff(energy.subs(eps, sp.exp(-s)), s)
    return float(sp.simplify(slope))


def fit_c_eps_scaling(grid: GridSpec, eps_list: Sequence[float]) -> Tuple[float, float, float]:
    """Least-squares fit c_eps = slope*|ln eps| + intercept; returns (slope, intercept, r^2)."""
    x = [abs(math.log(eps)) for eps in eps_list]
    y = [compute_c_eps(grid, eps) for eps in eps_list]
    fit = stats.linregress(x, y)
    return float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2)


def fit_rate(eps_list: Sequence[float], gaps: Sequence[float]) -> Optional[float]:
    """Exponent kappa in gap ~ eps^kappa, or None when it cannot be fitted."""
    pairs = [(math.log(e), math.log(g)) for e, g in zip(eps_list, gaps) if g > 0 and math.isfinite(g)]
    if len(pairs) < 2:
        return None
    x, y = zip(*pairs)
    return float(stats.linregress(x, y).slope)


def _realization_statistics(grid: GridSpec, eps_list: Sequence[float], seed: int, stream: int, r: float,
                            delta: float, alpha: float, a: float, zero_noise: bool) -> Dict[str, List[float]]:
    xi = constant(grid, 0.0) if zero_noise else sample_white_noise(grid, seed, stream)
    bundles = [build_bundle(grid, seed, eps, stream=stream, xi=xi) for eps in eps_list]
    holder = NormSpec(kind=NormKind.HOLDER, alpha=alpha, mu=-delta)
    holder_neg = NormSpec(kind=NormKind.HOLDER, alpha=alpha - 1.0, mu=-delta)
    sup_weighted = NormSpec(kind=NormKind.LEBESGUE, p=math.inf, mu=-delta)

    out: Dict[str, List[float]] = {key: [] for key in (
        "grad_sq", "wick_lr", "grad_mean", "wick_mean", "exp_norm",
        "wick_gap", "y_gap", "potential_gap", "exp_gap")}
    exps = []
    for b in bundles:
        grad_sq = np.abs(b.grad_Y_eps[0].values) ** 2 + np.abs(b.grad_Y_eps[1].values) ** 2
        out["grad_sq"].append(lebesgue_norm(np.sqrt(grad_sq), grid, r, -delta) ** 2)
        out["wick_lr"].append(lebesgue_norm(b.wick.values, grid, r, -delta))
        out["grad_mean"].append(float(np.mean(grad_sq)))
        out["wick_mean"].append(float(np.mean(b.wick.values.real)))
        exp_field = Field(grid, np.exp(a * b.Y_eps.values.real))
        exps.append(exp_field)
        out["exp_norm"].append(norm(exp_field, holder))
    for k in range(len(bundles) - 1):
        b0, b1 = bundles[k], bundles[k + 1]
        out["wick_gap"].append(norm(b0.wick - b1.wick, holder_neg))
        out["y_gap"].append(norm(b0.Y_eps - b1.Y_eps, holder))
        out["potential_gap"].append(norm(b0.phi_xi_eps - b1.phi_xi_eps, holder))
        out["exp_gap"].append(norm(exps[k] - exps[k + 1], sup_weighted))
    return out


def bounds_passed(variation: float, wick_gaps: Sequence[float], y_gaps: Sequence[float],
                  exp_norms: np.ndarray) -> bool:
    """
    Pass criterion of a Monte Carlo campaign.

    The gradient ratio varies by less than 50%, the median Wick and Y_eps gaps strictly decrease over
    at least two pairs, and every realization has a finite e^{aY_eps} norm.
    """
    def decreasing(gaps: Sequence[float]) -> bool:
        return len(gaps) >= 2 and bool(np.all(np.diff(np.asarray(gaps, dtype=float)) < 0))

    finite = bool(np.all(np.isfinite(exp_norms)))
    return variation < 0.5 and decreasing(wick_gaps) and decreasing(y_gaps) and finite


def verify_stochastic_bounds(grid: GridSpec, eps_list: Sequence[float], realizations: int, seed: int = 0,
                             r: float = 4.0, delta: float = 0.75, alpha: float = 0.5, a: float = 1.0,
                             workers: Optional[int] = None, zero_noise: bool = False) -> StochasticReport:
    """
    Monte Carlo verification of the noise bounds along a dyadic epsilon list.

    Realization m uses stream m for every epsilon, so consecutive scales are coupled.

    Args:
        grid: Grid resolving every epsilon
        eps_list: Mollification scales (sorted coarse to fine internally)
        realizations: Number of realizations M (at least 20)
        seed: Master seed
        r: Integrability of the gradient and Wick bounds
        delta: Weight decay, norms carry <x>^-delta
        alpha: Hoelder regularity of the convergence norms
        a: Exponent in the weights e^{aY_eps}
        workers: Thread count
        zero_noise: Replace every realization by xi = 0

    Returns:
        StochasticReport
    """
    if realizations < MIN_REALIZATIONS:
        raise StatisticsRefusedError(f"{realizations} realizations requested, at least {MIN_REALIZATIONS} required")
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    unresolved = [e for e in eps_list if not is_resolved(grid, e)]
    if unresolved:
        raise UnderResolvedError(f"eps values {unresolved} are not resolved on {grid.label()}",
                                 resolvable=[e for e in eps_list if is_resolved(grid, e)])
    for eps in eps_list:
        require_resolved(grid, eps)

    logger.info(f"Running {realizations} realizations over eps={eps_list} on {grid.label()}")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        per_realization = list(pool.map(
            lambda m: _realization_statistics(grid, eps_list, seed, m, r, delta, alpha, a, zero_noise),
            range(realizations),
        ))

    def stacked(key: str) -> np.ndarray:
        return np.array([stats_m[key] for stats_m in per_realization], dtype=float)

    sqrt_m = math.sqrt(realizations)
    log_eps = np.array([abs(math.log(e)) for e in eps_list])
    grad_ratio = stacked("grad_sq").mean(axis=0) / log_eps
    wick_lr_ratio = stacked("wick_lr").mean(axis=0) / log_eps
    grad_mean = stacked("grad_mean")
    wick_mean = stacked("wick_mean")
    exp_sup = stacked("exp_norm").max(axis=1)
    wick_gaps = np.median(stacked("wick_gap"), axis=0) if len(eps_list) > 1 else np.array([])
    y_gaps = np.median(stacked("y_gap"), axis=0) if len(eps_list) > 1 else np.array([])
    potential_gaps = np.median(stacked("potential_gap"), axis=0) if len(eps_list) > 1 else np.array([])
    exp_gaps = np.median(stacked("exp_gap"), axis=0) if len(eps_list) > 1 else np.array([])

    pair_eps = eps_list[1:]
    rates = {
        "wick": fit_rate(pair_eps, wick_gaps),
        "Y": fit_rate(pair_eps, y_gaps),
        "potential": fit_rate(pair_eps, potential_gaps),
        "exp": fit_rate(pair_eps, exp_gaps),
    }
    slope, r2 = (None, None)
    if len(eps_list) >= 2:
        slope, _, r2 = fit_c_eps_scaling(grid, eps_list)

    variation = float((grad_ratio.max() - grad_ratio.min()) / grad_ratio.max()) if grad_ratio.max() > 0 else 0.0
    passed = bounds_passed(variation, wick_gaps, y_gaps, stacked("exp_norm"))
    report = StochasticReport(
        eps_list=list(eps_list), realizations=realizations, seed=seed, r=r, delta=delta, alpha=alpha, a=a,
        c_eps=[compute_c_eps(grid, e) for e in eps_list],
        c_eps_mc=grad_mean.mean(axis=0).tolist(),
        c_eps_mc_se=(grad_mean.std(axis=0, ddof=1) / sqrt_m).tolist(),
        wick_mean=wick_mean.mean(axis=0).tolist(),
        wick_se=(wick_mean.std(axis=0, ddof=1) / sqrt_m).tolist(),
        grad_ratio=grad_ratio.tolist(), wick_lr_ratio=wick_lr_ratio.tolist(),
        wick_gaps=wick_gaps.tolist(), y_gaps=y_gaps.tolist(),
        potential_gaps=potential_gaps.tolist(), exp_gaps=exp_gaps.tolist(),
        exp_sup_median=float(np.median(exp_sup)), exp_sup_max=float(np.max(exp_sup)),
        rates=rates, c_eps_slope=slope, c_eps_r2=r2,
        passed=passed,
    )
    logger.info(f"Stochastic bounds: gradient ratio variation {variation:.3f}, passed={passed}")
    return report
