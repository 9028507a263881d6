from __future__ import annotations

import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.core.errors import DyadicRangeError, UsageError
from app.models.models import GridSpec, NormKind, NormSpec
from app.services.lp_besov import (
    annulus_symbol,
    bessel_potential_norm,
    check_commutator,
    check_dyadic_sum,
    check_interpolation,
    check_pull_weight,
    commutator_corpus,
    corpus_report,
    check_duality,
    check_product,
    dyadic_levels,
    dyadic_partition,
    lp_project,
    norm,
    pull_weight_corpus,
    smooth_corpus,
    smooth_step,
    weight_field,
)
from app.services.spectral_grid import Field, constant, forward_transform, gaussian, plane_wave, zeros

GRID = GridSpec(box_length=8.0, points_per_side=64)
FINE = GridSpec(box_length=8.0, points_per_side=128)


def test_smooth_step_limits():
    t = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    values = smooth_step(t)
    assert values[0] == 0.0 and values[1] == 0.0
    assert values[2] == pytest.approx(0.5)
    assert values[3] == 1.0 and values[4] == 1.0


def test_levels_cover_the_lattice():
    levels = dyadic_levels(GRID)
    assert levels[0] == 0.5
    assert levels[-1] >= math.sqrt(2) * GRID.k_max
    assert levels[-2] < math.sqrt(2) * GRID.k_max


def test_partition_of_unity_on_the_lattice():
    assert dyadic_partition(GRID).partition_residual(fraction=1.5) < 1e-12


def test_blocks_reconstruct_a_random_field(rng):
    f = Field(GRID, rng.standard_normal(GRID.shape) + 1j * rng.standard_normal(GRID.shape))
    total = sum(lp_project(f, N).values for N in dyadic_levels(GRID))
    assert np.max(np.abs(total - f.values)) < 1e-9 * np.max(np.abs(f.values))


def test_projection_of_plane_wave_is_scaled_by_symbol():
    wave = plane_wave(GRID, 3, 0)
    k = 3 * 2 * math.pi / GRID.box_length
    projected = lp_project(wave, 2.0)
    assert np.max(np.abs(projected.values - annulus_symbol(k / 2.0) * wave.values)) < 1e-12


def test_constant_lives_in_the_low_block():
    c = constant(GRID, 1.5 - 0.5j)
    assert np.max(np.abs(lp_project(c, 0.5).values - c.values)) < 1e-12
    for N in dyadic_levels(GRID)[1:]:
        assert np.max(np.abs(lp_project(c, N).values)) < 1e-12


def test_projection_keeps_spectral_tag():
    f_hat = forward_transform(gaussian(GRID))
    assert lp_project(f_hat, 1.0).tag == f_hat.tag


def test_projection_level_errors():
    f = gaussian(GRID)
    with pytest.raises(DyadicRangeError):
        lp_project(f, 2.0 * dyadic_levels(GRID)[-1])
    with pytest.raises(UsageError):
        lp_project(f, 3.0)


def test_weight_field_values():
    assert np.all(weight_field(GRID, 0.0).values == 1.0)
    grid = GridSpec(box_length=20.0, points_per_side=20)
    w2 = weight_field(grid, 2.0).values.real
    assert w2[10, 10] == pytest.approx(1.0)
    w1 = weight_field(grid, 1.0).values.real
    assert w1[13, 14] == pytest.approx(math.sqrt(26.0))
    assert np.all(w1 > 0)


def test_weight_uses_wrapped_distance():
    grid = GridSpec(box_length=20.0, points_per_side=20)
    w = weight_field(grid, 1.0).values.real
    assert w[1, 10] == pytest.approx(w[19, 10])


def test_norm_of_zero_is_zero():
    for kind in NormKind:
        assert norm(zeros(GRID), NormSpec(kind=kind, alpha=1.0, mu=0.5)) == 0.0


def test_norm_of_constant_is_its_l2_mass():
    c = constant(GRID, 3.0 + 4.0j)
    value = norm(c, NormSpec(kind=NormKind.BESOV, alpha=0.0, p=2.0, q=2.0))
    assert value == pytest.approx(5.0 * GRID.box_length, rel=1e-12)


def test_lebesgue_and_sobolev_kinds():
    f = gaussian(GRID, width=1.0)
    l2 = norm(f, NormSpec(kind=NormKind.LEBESGUE, p=2.0))
    assert l2 == pytest.approx(math.sqrt(math.pi / 2), rel=1e-8)
    sup = norm(f, NormSpec(kind=NormKind.LEBESGUE, p=math.inf))
    assert sup == pytest.approx(1.0)
    assert norm(f, NormSpec(kind=NormKind.SOBOLEV_W1P, p=2.0)) > l2


def test_holder_alias_is_besov_infinity():
    f = gaussian(GRID, width=0.8)
    holder = norm(f, NormSpec(kind=NormKind.HOLDER, alpha=0.5, mu=-0.5))
    besov = norm(f, NormSpec(kind=NormKind.BESOV, alpha=0.5, p=math.inf, q=math.inf, mu=-0.5))
    assert holder == besov


def test_invalid_exponents_are_refused():
    with pytest.raises(ValidationError):
        NormSpec(p=0.5)
    bad = NormSpec.model_construct(kind=NormKind.BESOV, alpha=0.0, p=2.0, q=0.5, mu=0.0)
    with pytest.raises(UsageError):
        norm(gaussian(GRID), bad)


def test_sobolev_alias_is_equivalent_to_bessel_potential_norm():
    ratios = []
    for grid in (GRID, FINE):
        f = gaussian(grid, width=0.7, center=(0.3, -0.2))
        alias = norm(f, NormSpec(kind=NormKind.SOBOLEV_HS, alpha=1.0))
        ratios.append(alias / bessel_potential_norm(f, 1.0))
    assert 0.25 < ratios[0] < 2.5
    assert ratios[1] == pytest.approx(ratios[0], rel=1e-6)


def test_pull_weight_without_weight_is_exactly_one():
    f = gaussian(GRID, width=0.9, center=(1.0, 0.5))
    assert check_pull_weight(f, NormSpec(alpha=1.0, mu=0.0)) == 1.0


def test_pull_weight_divides_the_weighted_norm_by_the_pulled_norm():
    f = gaussian(GRID, width=0.9, center=(1.0, 0.5))
    spec = NormSpec(alpha=1.0, p=2.0, q=2.0, mu=1.5).resolved()
    pulled = f * weight_field(GRID, 1.5)
    expected = norm(f, spec) / norm(pulled, spec.model_copy(update={"mu": 0.0}))
    assert check_pull_weight(f, spec) == pytest.approx(expected, rel=1e-12)


def test_pull_weight_corpus_is_resolution_stable():
    spec = NormSpec(alpha=1.0, p=2.0, q=2.0, mu=1.0)
    coarse = pull_weight_corpus(GRID, spec, size=50, seed=3, workers=4)
    fine = pull_weight_corpus(FINE, spec, size=50, seed=3, workers=4)
    spread_coarse = coarse.maximum / coarse.minimum
    spread_fine = fine.maximum / fine.minimum
    assert math.isfinite(spread_coarse) and coarse.minimum > 0
    assert abs(spread_fine - spread_coarse) / spread_coarse < 0.25

    centred = gaussian(GRID, width=0.5)
    r = check_pull_weight(centred, spec.model_copy(update={"mu": 2.0}))
    wide = pull_weight_corpus(GRID, spec.model_copy(update={"mu": 2.0}), size=50, seed=3)
    assert 0.5 * wide.minimum <= r <= 2.0 * wide.maximum


def test_commutator_vanishes_for_flat_weight():
    f = gaussian(GRID, width=1.0)
    assert max(check_commutator(f, 1e-10, 2.0).values()) < 1e-6


def test_commutator_decays_for_a_single_bump():
    coefficients = check_commutator(gaussian(GRID, width=1.0), 0.5, 2.0)
    high = [value for N, value in coefficients.items() if N > 4]
    assert coefficients[4.0] >= max(high)
    assert coefficients[dyadic_levels(GRID)[-1]] < coefficients[4.0]


def test_commutator_corpus_is_finite_and_resolution_stable():
    coarse = commutator_corpus(GRID, 0.5, 2.0, size=20, seed=1)
    fine = commutator_corpus(FINE, 0.5, 2.0, size=20, seed=1)
    assert math.isfinite(coarse.maximum)
    assert abs(fine.maximum - coarse.maximum) / coarse.maximum < 0.25


def test_double_commutator_is_finite():
    report = commutator_corpus(GRID, 0.5, 2.0, with_gradient=True, size=10, seed=2)
    assert math.isfinite(report.maximum) and report.maximum > 0


def test_interpolation_holds_with_constant_below_one_and_a_half():
    report = corpus_report(GRID, "interpolation",
                           lambda f, _: check_interpolation(f, 0.0, 0.0, 2.0, 0.5, 0.5), size=30, seed=5)
    assert report.maximum <= 1.5


def test_dyadic_sum_bound():
    report = corpus_report(GRID, "dyadic sum", lambda f, _: check_dyadic_sum(f, 1.0, 0.5), size=30, seed=6)
    assert 0 < report.maximum <= 2.0 + 1e-9


def test_product_and_duality_constants_are_resolution_stable():
    for witness in (check_product, check_duality):
        coarse = corpus_report(GRID, witness.__name__, witness, size=20, seed=7)
        fine = corpus_report(FINE, witness.__name__, witness, size=20, seed=7)
        assert 0 < coarse.maximum < math.inf
        assert abs(fine.maximum - coarse.maximum) / coarse.maximum < 0.25


def test_corpus_is_seeded_and_grid_independent():
    a = smooth_corpus(GRID, size=5, seed=11)
    b = smooth_corpus(GRID, size=5, seed=11)
    c = smooth_corpus(FINE, size=5, seed=11)
    for f, g, h in zip(a, b, c):
        assert np.array_equal(f.values, g.values)
        assert np.max(np.abs(h.values[::2, ::2] - f.values)) < 1e-12


def test_corpus_report_preserves_member_order():
    first = corpus_report(GRID, "order", lambda f, _: float(np.abs(f.values).sum()), size=12, seed=4, workers=1)
    threaded = corpus_report(GRID, "order", lambda f, _: float(np.abs(f.values).sum()), size=12, seed=4, workers=6)
    assert first.values == threaded.values
