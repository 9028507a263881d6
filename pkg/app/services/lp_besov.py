"""
Littlewood-Paley projectors and weighted norm evaluators.

The low block (N = 1/2) has symbol chi(|k|), the annulus blocks N = 1, 2, 4, ... have
symbols chi(|k|/2N) - chi(|k|/N). The sum telescopes to chi(|k|/2N_max), which is exactly
one on the lattice because N_max >= sqrt(2) k_max.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sfft

from app.core.errors import DyadicRangeError, UsageError
from app.models.models import CorpusReport, GridSpec, NormKind, NormSpec
from app.services.spectral_grid import (
    Field,
    PHYSICAL,
    coordinates,
    gradient,
    k_squared,
)

# Configure logging
logger = logging.getLogger(__name__)

LOW_LEVEL = 0.5


def _exp_ramp(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t, dtype=float)
    positive = t > 0
    out[positive] = np.exp(-1.0 / t[positive])
    return out


def smooth_step(t) -> np.ndarray:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    a = _exp_ramp(t)
    b = _exp_ramp(1.0 - t)
    return a / (a + b)


def low_symbol(r) -> np.ndarray:
    """Radial cutoff equal to 1 on |xi| <= 1/2 and 0 on |xi| >= 1."""
    return smooth_step(2.0 * (1.0 - np.asarray(r, dtype=float)))


def annulus_symbol(r) -> np.ndarray:
    """K(xi) = chi(xi/2) - chi(xi), supported in 1/2 <= |xi| <= 2."""
    r = np.asarray(r, dtype=float)
    return low_symbol(r / 2.0) - low_symbol(r)


@dataclass(frozen=True, eq=False)
class DyadicPartition:
    """Symbols of all dyadic blocks on one grid."""

    grid: GridSpec
    levels: Tuple[float, ...]
    symbols: Tuple[np.ndarray, ...]

    @property
    def n_max(self) -> float:
        return self.levels[-1]

    def symbol(self, N: float) -> np.ndarray:
        return self.symbols[self.index(N)]

    def index(self, N: float) -> int:
        if N > self.n_max:
            raise DyadicRangeError(f"dyadic level {N} exceeds the grid's range (N_max = {self.n_max:g})")
        for i, level in enumerate(self.levels):
            if level == N:
                return i
        raise UsageError(f"{N} is not a dyadic level (expected one of {self.levels})")

    def partition_residual(self, fraction: float = 0.9) -> float:
        """max |sum of symbols - 1| over lattice frequencies below fraction * Nyquist."""
        total = np.sum(self.symbols, axis=0)
        mask = np.sqrt(k_squared(self.grid)) < fraction * self.grid.k_max
        return float(np.max(np.abs(total[mask] - 1.0)))


def dyadic_levels(grid: GridSpec) -> Tuple[float, ...]:
    n_max = 1
    while n_max < math.sqrt(2.0) * grid.k_max:
        n_max *= 2
    levels = [LOW_LEVEL]
    level = 1
    while level <= n_max:
        levels.append(float(level))
        level *= 2
    return tuple(levels)


@lru_cache(maxsize=16)
def dyadic_partition(grid: GridSpec) -> DyadicPartition:
    r = np.sqrt(k_squared(grid))
    levels = dyadic_levels(grid)
    symbols = []
    for N in levels:
        symbol = low_symbol(r) if N == LOW_LEVEL else annulus_symbol(r / N)
        symbol.setflags(write=False)
        symbols.append(symbol)
    logger.debug(f"Built dyadic partition on {grid.label()} with {len(levels)} levels")
    return DyadicPartition(grid, levels, tuple(symbols))


def lp_project(f: Field, N: float) -> Field:
    """Delta_N f, returned with the tag of the input."""
    symbol = dyadic_partition(f.grid).symbol(N)
    if f.tag == PHYSICAL:
        return f.with_values(sfft.ifft2(sfft.fft2(f.values, norm="ortho") * symbol, norm="ortho"))
    return f.with_values(f.values * symbol)


def _blocks(f: Field) -> List[Tuple[float, np.ndarray]]:
    """All physical-space blocks (N, Delta_N f values)."""
    partition = dyadic_partition(f.grid)
    if f.tag == PHYSICAL:
        spectrum = sfft.fft2(f.values, norm="ortho")
    else:
        spectrum = f.values
    return [(N, sfft.ifft2(spectrum * s, norm="ortho")) for N, s in zip(partition.levels, partition.symbols)]


@lru_cache(maxsize=64)
def _weight(grid: GridSpec, mu: float) -> np.ndarray:
    if mu == 0:
        w = np.ones(grid.shape)
    else:
        x1, x2 = coordinates(grid)
        L = grid.box_length
        d1 = np.minimum(np.abs(x1), L - np.abs(x1))
        d2 = np.minimum(np.abs(x2), L - np.abs(x2))
        w = (1.0 + d1 ** 2 + d2 ** 2) ** (mu / 2.0)
    w.setflags(write=False)
    return w


def weight_field(grid: GridSpec, mu: float) -> Field:
    """<x>^mu with x measured as the wrapped distance to the origin."""
    return Field(grid, _weight(grid, float(mu)))


def lebesgue_norm(values: np.ndarray, grid: GridSpec, p: float, mu: float = 0.0) -> float:
    weighted = np.abs(values) * _weight(grid, float(mu))
    if math.isinf(p):
        return float(np.max(weighted))
    return float((grid.spacing ** 2 * np.sum(weighted ** p)) ** (1.0 / p))


def _combine(terms: Sequence[float], q: float) -> float:
    terms = np.asarray(terms, dtype=float)
    if math.isinf(q):
        return float(np.max(terms))
    return float(np.sum(terms ** q) ** (1.0 / q))


def block_norms(f: Field, p: float, mu: float) -> Dict[float, float]:
    """||Delta_N f||_{L^p_mu} for every level N."""
    return {N: lebesgue_norm(values, f.grid, p, mu) for N, values in _blocks(f)}


def _validate(spec: NormSpec) -> None:
    for name, value in (("p", spec.p), ("q", spec.q)):
        if math.isnan(value) or value < 1:
            raise UsageError(f"{name} = {value} outside [1, inf]")


def norm(f: Field, spec: NormSpec) -> float:
    """
    Evaluate a weighted norm.

    Args:
        f: Field, physical or spectral
        spec: Norm to evaluate; sobolev_hs and holder are evaluated as their Besov aliases

    Returns:
        The norm value
    """
    _validate(spec)
    spec = spec.resolved()
    physical = f if f.tag == PHYSICAL else f.with_values(sfft.ifft2(f.values, norm="ortho"))
    if spec.kind is NormKind.LEBESGUE:
        return lebesgue_norm(physical.values, f.grid, spec.p, spec.mu)
    if spec.kind is NormKind.SOBOLEV_W1P:
        g1, g2 = gradient(physical)
        grad_abs = np.sqrt(np.abs(g1.values) ** 2 + np.abs(g2.values) ** 2)
        return (lebesgue_norm(physical.values, f.grid, spec.p, spec.mu)
                + lebesgue_norm(grad_abs, f.grid, spec.p, spec.mu))
    terms = [N ** spec.alpha * lebesgue_norm(values, f.grid, spec.p, spec.mu) for N, values in _blocks(physical)]
    return _combine(terms, spec.q)


def bessel_potential_norm(f: Field, alpha: float, mu: float = 0.0) -> float:
    """||F^-1 <k>^alpha F f||_{L^2_mu}."""
    japanese = (1.0 + k_squared(f.grid)) ** (alpha / 2.0)
    spectrum = f.values if f.tag != PHYSICAL else sfft.fft2(f.values, norm="ortho")
    return lebesgue_norm(sfft.ifft2(spectrum * japanese, norm="ortho"), f.grid, 2.0, mu)


def check_pull_weight(f: Field, spec: NormSpec) -> float:
    """Ratio ||f||_{B^alpha_{p,q,mu}} / ||f <x>^mu||_{B^alpha_{p,q}}."""
    spec = spec.resolved()
    unweighted = spec.model_copy(update={"mu": 0.0})
    pulled = f * weight_field(f.grid, spec.mu) if spec.mu != 0 else f
    denominator = norm(pulled, unweighted)
    if denominator == 0:
        return 1.0
    return norm(f, spec) / denominator


def check_commutator(f: Field, delta: float, p: float, with_gradient: bool = False) -> Dict[float, float]:
    """
    Measure c_N = N ||C_N f||_{L^p} / ||f||_{L^p} for each annulus level N >= 1.

    C_N is [Delta_N, <x>^delta], or with_gradient=True the double commutator
    [grad, [Delta_N, <x>^delta]] = [Delta_N, grad <x>^delta].
    """
    grid = f.grid
    base = lebesgue_norm(f.values, grid, p)
    if base == 0:
        return {N: 0.0 for N in dyadic_partition(grid).levels if N >= 1}
    if with_gradient:
        x1, x2 = coordinates(grid)
        L = grid.box_length
        y1 = (x1 + L / 2) % L - L / 2
        y2 = (x2 + L / 2) % L - L / 2
        bracket = 1.0 + y1 ** 2 + y2 ** 2
        factors = [delta * y1 * bracket ** (delta / 2 - 1), delta * y2 * bracket ** (delta / 2 - 1)]
    else:
        factors = [_weight(grid, float(delta))]
    coefficients = {}
    for N in dyadic_partition(grid).levels:
        if N < 1:
            continue
        parts = []
        for w in factors:
            comm = lp_project(f.with_values(w * f.values), N).values - w * lp_project(f, N).values
            parts.append(np.abs(comm) ** 2)
        magnitude = np.sqrt(np.sum(parts, axis=0))
        coefficients[N] = N * lebesgue_norm(magnitude, grid, p) / base
    return coefficients


def check_interpolation(f: Field, alpha0: float, mu0: float, alpha1: float, mu1: float, theta: float) -> float:
    """||f||_{H^alpha_mu} / (||f||^{1-theta}_{H^alpha0_mu0} ||f||^theta_{H^alpha1_mu1})."""
    alpha = (1 - theta) * alpha0 + theta * alpha1
    mu = (1 - theta) * mu0 + theta * mu1
    lhs = norm(f, NormSpec(kind=NormKind.SOBOLEV_HS, alpha=alpha, mu=mu))
    n0 = norm(f, NormSpec(kind=NormKind.SOBOLEV_HS, alpha=alpha0, mu=mu0))
    n1 = norm(f, NormSpec(kind=NormKind.SOBOLEV_HS, alpha=alpha1, mu=mu1))
    if lhs == 0:
        return 0.0
    return lhs / (n0 ** (1 - theta) * n1 ** theta)


def check_product(f1: Field, f2: Field, alpha1: float = 1.0, alpha2: float = 0.5, kappa: float = 0.1,
                  p1: float = 4.0, p2: float = 4.0, mu1: float = 0.1, mu2: float = 0.1) -> float:
    """||f1 f2||_{B^{alpha-kappa}_{p,p,mu1+mu2}} over the product of the factor norms."""
    alpha = min(alpha1, alpha2, alpha1 + alpha2)
    p = 1.0 / (1.0 / p1 + 1.0 / p2)
    lhs = norm(f1 * f2, NormSpec(alpha=alpha - kappa, p=p, q=p, mu=mu1 + mu2))
    rhs = norm(f1, NormSpec(alpha=alpha1, p=p1, q=p1, mu=mu1)) * norm(f2, NormSpec(alpha=alpha2, p=p2, q=p2, mu=mu2))
    return lhs / rhs if rhs > 0 else 0.0


def check_duality(f1: Field, f2: Field, alpha: float = 0.5, p: float = 2.0, q: float = 2.0, mu: float = 0.5) -> float:
    """|int f1 f2| over ||f1||_{B^alpha_{p,q,mu}} ||f2||_{B^-alpha_{p',q',-mu}}."""
    p_dual = p / (p - 1) if p > 1 else math.inf
    q_dual = q / (q - 1) if q > 1 else math.inf
    pairing = abs(f1.grid.spacing ** 2 * np.sum(f1.values * f2.values))
    rhs = (norm(f1, NormSpec(alpha=alpha, p=p, q=q, mu=mu))
           * norm(f2, NormSpec(alpha=-alpha, p=p_dual, q=q_dual, mu=-mu)))
    return pairing / rhs if rhs > 0 else 0.0


def check_dyadic_sum(f: Field, gamma: float = 1.0, gamma0: float = 0.5, delta: float = 0.0) -> float:
    """sum_N N^gamma ||Delta_N f||_{L^2_delta} over ||f||_{H^{gamma+gamma0}_delta}."""
    total = sum(N ** gamma * value for N, value in block_norms(f, 2.0, delta).items())
    rhs = norm(f, NormSpec(kind=NormKind.SOBOLEV_HS, alpha=gamma + gamma0, mu=delta))
    return total / rhs if rhs > 0 else 0.0


# Random smooth corpus used by the inequality witnesses. Members are defined by
# continuous parameters, so the same seed gives the same functions on every grid.

def corpus_parameters(seed: int, size: int) -> List[dict]:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    members = []
    for _ in range(size):
        bumps = []
        for _ in range(int(rng.integers(1, 4))):
            bumps.append({
                "center": rng.uniform(-1.5, 1.5, size=2),
                "width": float(rng.uniform(0.5, 1.2)),
                "amplitude": complex(rng.normal(), rng.normal()),
                "wave": rng.uniform(-2.0, 2.0, size=2),
            })
        members.append({"bumps": bumps})
    return members


def sample_member(grid: GridSpec, member: dict) -> Field:
    x1, x2 = coordinates(grid)
    values = np.zeros(grid.shape, dtype=np.complex128)
    for bump in member["bumps"]:
        c1, c2 = bump["center"]
        k1, k2 = bump["wave"]
        envelope = np.exp(-((x1 - c1) ** 2 + (x2 - c2) ** 2) / bump["width"] ** 2)
        values += bump["amplitude"] * envelope * np.exp(1j * (k1 * x1 + k2 * x2))
    return Field(grid, values)


def smooth_corpus(grid: GridSpec, size: int = 50, seed: int = 0) -> List[Field]:
    return [sample_member(grid, member) for member in corpus_parameters(seed, size)]


def corpus_report(grid: GridSpec, name: str, witness: Callable[[Field, Field], float], size: int = 50,
                  seed: int = 0, workers: Optional[int] = None) -> CorpusReport:
    """
    Evaluate a witness over the corpus (each member paired with its successor).

    Args:
        grid: Grid to sample the corpus on
        name: Label of the inequality
        witness: Callable (f, g) -> measured ratio
        size: Number of corpus members
        seed: Corpus seed
        workers: Thread count; results are merged in member order

    Returns:
        CorpusReport with the measured values and their envelope
    """
    corpus = smooth_corpus(grid, size, seed)
    pairs = [(corpus[i], corpus[(i + 1) % size]) for i in range(size)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        values = list(pool.map(lambda pair: float(witness(*pair)), pairs))
    logger.info(f"Corpus witness '{name}' on {grid.label()}: min={min(values):.4g} max={max(values):.4g}")
    return CorpusReport(
        name=name, seed=seed, size=size, points_per_side=grid.points_per_side, values=values,
        minimum=float(np.min(values)), maximum=float(np.max(values)), median=float(np.median(values)),
    )


def pull_weight_corpus(grid: GridSpec, spec: NormSpec, size: int = 50, seed: int = 0,
                       workers: Optional[int] = None) -> CorpusReport:
    return corpus_report(grid, f"pull_weight {spec.label()}", lambda f, _: check_pull_weight(f, spec),
                         size, seed, workers)


def commutator_corpus(grid: GridSpec, delta: float, p: float, with_gradient: bool = False, size: int = 50,
                      seed: int = 0, workers: Optional[int] = None) -> CorpusReport:
    name = f"commutator delta={delta:g} p={p:g}" + (" grad" if with_gradient else "")
    return corpus_report(grid, name, lambda f, _: max(check_commutator(f, delta, p, with_gradient).values()),
                         size, seed, workers)
