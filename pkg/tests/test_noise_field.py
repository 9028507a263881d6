from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, special

from app.core.errors import ConfigurationError, StatisticsRefusedError, UnderResolvedError, UsageError
from app.models.models import GridSpec, NormKind, NormSpec
from app.services.lp_besov import norm
from app.services.noise_field import (
    bounds_passed,
    bump_profile,
    build_bundle,
    compute_c_eps,
    field_hash,
    fit_c_eps_scaling,
    fit_rate,
    green_cell_average,
    green_cutoff,
    green_hat,
    mollifier_kernel,
    mollifier_normalization,
    require_resolved,
    restrict_noise,
    sample_white_noise,
    truncated_green,
    verify_stochastic_bounds,
    wick_slope_oracle,
)
from app.services.spectral_grid import constant, coordinates, gaussian, integrate as quadrature, k_squared

BOX = GridSpec(box_length=4.0, points_per_side=64)
SMALL = GridSpec(box_length=4.0, points_per_side=16)


def test_bump_profile_support():
    r = np.array([0.0, 0.5, 0.999, 1.0, 1.5])
    values = bump_profile(r)
    assert values[0] == pytest.approx(math.exp(-1.0))
    assert np.all(values[:3] > 0)
    assert values[3] == 0.0 and values[4] == 0.0


def test_mollifier_profile_has_unit_mass():
    z = mollifier_normalization()
    mass, _ = integrate.dblquad(lambda y, x: z * float(bump_profile(math.hypot(x, y))), -1.0, 1.0, -1.0, 1.0,
                                epsabs=1e-12, epsrel=1e-10)
    assert mass == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize("eps", [0.25, 0.3, 0.45])
def test_sampled_mollifier_integrates_to_one(eps):
    kernel = mollifier_kernel(BOX, eps)
    assert quadrature(kernel).real == pytest.approx(1.0, abs=1e-8)
    assert np.all(kernel.values.real >= 0)


def test_resolution_rule():
    assert require_resolved(BOX, 0.25).epsilon == 0.25
    with pytest.raises(UnderResolvedError):
        require_resolved(BOX, 0.125)
    with pytest.raises(ConfigurationError):
        require_resolved(BOX, 0.5)


def test_green_function_support_and_logarithm():
    grid = GridSpec(box_length=3.2, points_per_side=32)
    G = truncated_green(grid).values.real
    x1, x2 = coordinates(grid)
    r = np.sqrt(x1 ** 2 + x2 ** 2)
    assert np.all(G[r >= 0.5] == 0.0)
    j = int(np.argmin(np.abs(x1[:, 0] - 0.1)))
    centre = grid.points_per_side // 2
    assert G[j, centre] == pytest.approx(math.log(r[j, centre]) / (2 * math.pi), abs=1e-12)
    assert green_cutoff(np.array([0.2]))[0] == 1.0


def test_green_origin_cell_is_the_cell_average():
    unit, _ = integrate.dblquad(lambda y, x: 0.5 * math.log(x * x + y * y), 0.0, 1.0, 0.0, 1.0,
                                epsabs=1e-11, epsrel=1e-10)
    h = 0.05
    expected = (math.log(h / 2) + unit) / (2 * math.pi)
    assert green_cell_average(h) == pytest.approx(expected, abs=1e-7)


def test_green_refuses_small_boxes():
    with pytest.raises(ConfigurationError):
        truncated_green(GridSpec(box_length=2.0, points_per_side=32))


def _continuum_green_hat(k: float) -> float:
    def integrand(r: float) -> float:
        return math.log(r) * float(green_cutoff(np.array([r]))[0]) * special.j0(k * r) * r

    value, _ = integrate.quad(integrand, 0.0, 0.5, points=[0.25], limit=200, epsabs=1e-12)
    return value


def test_green_transform_matches_the_continuum_transform():
    grid = GridSpec(box_length=4.0, points_per_side=256)
    g_hat = green_hat(grid)
    step = 2 * math.pi / grid.box_length
    samples = [(m1, m2) for m1 in range(0, 6) for m2 in range(0, 6) if (m1, m2) != (0, 0)]
    discrete = np.array([g_hat[m1, m2] for m1, m2 in samples])
    continuum = np.array([_continuum_green_hat(step * math.hypot(m1, m2)) for m1, m2 in samples])
    assert np.max(np.abs(discrete - continuum)) < 0.05 * np.max(np.abs(continuum))


def test_green_laplacian_is_a_unit_mass_plus_smooth_part():
    grid = GridSpec(box_length=4.0, points_per_side=256)
    lap_g = -k_squared(grid) * green_hat(grid)
    r = np.sqrt(k_squared(grid))
    band = (r > grid.k_max / 16) & (r < grid.k_max / 8)
    assert 0.5 < float(np.median(lap_g[band])) < 1.5


def test_white_noise_is_reproducible():
    a = sample_white_noise(BOX, seed=9, stream=2)
    b = sample_white_noise(BOX, seed=9, stream=2)
    c = sample_white_noise(BOX, seed=9, stream=3)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert np.all(a.values.imag == 0)
    assert field_hash(a) == field_hash(b)


def test_white_noise_pairing_variance():
    f = gaussian(SMALL, width=0.6).values.real
    h2 = SMALL.spacing ** 2
    norm_sq = h2 * np.sum(f ** 2)
    pairings = np.array([h2 * np.sum(sample_white_noise(SMALL, 1, m).values.real * f) for m in range(40000)])
    assert 0.97 <= pairings.var(ddof=1) / norm_sq <= 1.03


def test_white_noise_spatial_mean():
    draws = 1000
    means = np.array([np.mean(sample_white_noise(SMALL, 2, m).values.real) for m in range(draws)])
    standardized = means.mean() * SMALL.box_length * math.sqrt(draws)
    assert abs(standardized) < 4


def test_zero_noise_bundle_is_deterministic_constant():
    bundle = build_bundle(BOX, seed=0, eps=0.25, xi=constant(BOX, 0.0))
    assert np.all(bundle.Y_eps.values == 0)
    assert np.all(bundle.wick.values == -bundle.c_eps)
    assert np.all(bundle.v_tilde.values == -bundle.c_eps)


def test_bundle_potential_identity():
    b = build_bundle(BOX, seed=4, eps=0.25)
    expected = b.wick.values - (b.lap_Y_eps.values - b.xi_eps.values)
    assert np.array_equal(b.v_tilde.values, expected.real)
    assert np.all(b.xi.values.imag == 0)


def test_bundle_refuses_unresolved_eps_and_foreign_noise():
    with pytest.raises(UnderResolvedError):
        build_bundle(BOX, seed=0, eps=0.1)
    with pytest.raises(UsageError):
        build_bundle(BOX, seed=0, eps=0.25, xi=sample_white_noise(SMALL, 0))


def test_bundle_manifest_records_noise_hash():
    b = build_bundle(BOX, seed=5, eps=0.25)
    manifest = b.manifest()
    assert manifest["xi_sha256"] == field_hash(sample_white_noise(BOX, 5))
    assert manifest["c_eps"] == b.c_eps
    assert set(manifest["norms"]) >= {"xi", "Y_eps", "wick", "v_tilde"}


def test_c_eps_is_positive_decreasing_and_seed_free():
    grid = GridSpec(box_length=2.5, points_per_side=640)
    values = [compute_c_eps(grid, 2.0 ** -k) for k in range(3, 7)]
    assert all(v > 0 for v in values)
    assert all(b > a for a, b in zip(values, values[1:]))
    assert build_bundle(BOX, 1, 0.25).c_eps == build_bundle(BOX, 2, 0.25).c_eps


def _mean_gradient_energy(stream: int) -> float:
    g1, g2 = build_bundle(BOX, 8, 0.25, stream=stream).grad_Y_eps
    return float(np.mean(np.abs(g1.values) ** 2 + np.abs(g2.values) ** 2))


def test_c_eps_is_the_expected_gradient_energy():
    samples = np.array([_mean_gradient_energy(m) for m in range(200)])
    c = compute_c_eps(BOX, 0.25)
    se = samples.std(ddof=1) / math.sqrt(len(samples))
    assert abs(samples.mean() - c) < 3 * se


def test_wick_field_is_centred():
    means = np.array([np.mean(build_bundle(BOX, 6, 0.25, stream=m).wick.values.real) for m in range(200)])
    se = means.std(ddof=1) / math.sqrt(len(means))
    assert abs(means.mean()) < 3 * se


def test_wick_slope_oracle():
    assert wick_slope_oracle() == pytest.approx(1 / (2 * math.pi), rel=1e-12)


@pytest.mark.slow
def test_c_eps_grows_like_log_inverse_eps():
    grid = GridSpec(box_length=3.0, points_per_side=1536)
    slope, _, r2 = fit_c_eps_scaling(grid, [2.0 ** -k for k in range(4, 8)])
    assert r2 > 0.99
    assert abs(slope - wick_slope_oracle()) < 0.15 * wick_slope_oracle()


def test_restricted_noise_gives_the_same_smoothed_field():
    fine = GridSpec(box_length=2.5, points_per_side=128)
    coarse = GridSpec(box_length=2.5, points_per_side=64)
    eps = 0.375
    xi = sample_white_noise(fine, 12)
    y_fine = build_bundle(fine, 12, eps, xi=xi).Y_eps.values.real[::2, ::2]
    y_coarse = build_bundle(coarse, 12, eps, xi=restrict_noise(xi, coarse)).Y_eps.values.real
    rms = math.sqrt(np.mean((y_fine - y_coarse) ** 2) / np.mean(y_fine ** 2))
    assert rms < 0.02


def test_restriction_checks_grids():
    xi = sample_white_noise(BOX, 0)
    with pytest.raises(UsageError):
        restrict_noise(xi, GridSpec(box_length=5.0, points_per_side=32))
    with pytest.raises(UsageError):
        restrict_noise(xi, GridSpec(box_length=4.0, points_per_side=128))


def test_fit_rate():
    eps = [0.25, 0.125, 0.0625]
    assert fit_rate(eps, [e ** 0.7 for e in eps]) == pytest.approx(0.7)
    assert fit_rate(eps[:1], [1.0]) is None
    assert fit_rate(eps, [0.0, 0.0, 1.0]) is None


def test_stochastic_bounds_refuse_small_samples():
    with pytest.raises(StatisticsRefusedError):
        verify_stochastic_bounds(BOX, [0.25], realizations=19)


def test_stochastic_bounds_report_resolvable_sub_ladder():
    with pytest.raises(UnderResolvedError) as info:
        verify_stochastic_bounds(BOX, [0.25, 0.125], realizations=20)
    assert info.value.resolvable == [0.25]


def test_zero_noise_gaps_are_the_constant_differences():
    grid = GridSpec(box_length=3.0, points_per_side=96)
    report = verify_stochastic_bounds(grid, [0.125, 0.25], realizations=20, zero_noise=True, workers=4)
    assert report.eps_list == [0.25, 0.125]
    c0, c1 = report.c_eps
    unit = norm(constant(grid, 1.0), NormSpec(kind=NormKind.HOLDER, alpha=report.alpha - 1.0, mu=-report.delta))
    assert report.wick_gaps[0] == pytest.approx(abs(c0 - c1) * unit, rel=1e-9)
    assert report.y_gaps == [0.0]
    assert report.potential_gaps == [0.0]
    assert report.exp_gaps == [0.0]
    assert report.wick_mean == pytest.approx([-c0, -c1])
    assert not report.passed


@pytest.mark.parametrize(
    "wick, y, exp_norms, expected",
    [
        ([0.4, 0.3], [0.2, 0.1], [[1.0, 2.0]], True),
        ([0.4, 0.3], [0.1, 0.2], [[1.0, 2.0]], False),
        ([0.4, 0.5], [0.2, 0.1], [[1.0, 2.0]], False),
        ([0.4, 0.3], [0.2, 0.1], [[1.0, math.inf]], False),
        ([0.4, 0.3], [0.2, 0.1], [[1.0, math.nan]], False),
        ([0.4], [0.2], [[1.0, 2.0]], False),
    ],
)
def test_bounds_criterion_needs_every_assertion(wick, y, exp_norms, expected):
    assert bounds_passed(0.1, wick, y, np.array(exp_norms)) is expected
    assert bounds_passed(0.6, [0.4, 0.3], [0.2, 0.1], np.ones((1, 2))) is False


@pytest.mark.slow
def test_stochastic_bounds_on_a_dyadic_ladder():
    grid = GridSpec(box_length=4.0, points_per_side=256)
    report = verify_stochastic_bounds(grid, [0.25, 0.125, 0.0625], realizations=20, seed=0)
    ratios = np.array(report.grad_ratio)
    assert (ratios.max() - ratios.min()) / ratios.max() < 0.5
    assert report.wick_gaps[1] < report.wick_gaps[0]
    assert report.y_gaps[1] < report.y_gaps[0]
    assert report.passed
    for c, mc, se in zip(report.c_eps, report.c_eps_mc, report.c_eps_mc_se):
        assert abs(mc - c) < 4 * se + 1e-12
    assert report.c_eps_slope is not None and report.c_eps_slope > 0
    assert math.isfinite(report.exp_sup_max)
