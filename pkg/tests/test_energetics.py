from __future__ import annotations

import math

import numpy as np
import pytest

from app.core.errors import UsageError
from app.models.models import NormKind, NormSpec
from app.services.energetics import (
    EnergyLedger,
    LedgerRow,
    audit_residuals,
    fit_log_growth,
    h1_energy,
    linear_h1_quantity,
    mass,
    modified_energy,
    time_derivative,
    weighted_diagnostics,
)
from app.services.gauge import to_primitive
from app.services.spectral_grid import gaussian, gradient, integrate, laplacian, l2_norm


def _row(t: float, h: float = 0.0, energy: float = 1.0) -> LedgerRow:
    return LedgerRow(time=t, mass=1.0, h1_energy=0.0, modified_energy=energy, laplacian_term=energy,
                     f_term=0.0, g_term=0.0, h_term=h)


def test_weighted_mass_is_the_primitive_l2_mass(torus32, trig_context, trig_datum):
    ctx = trig_context(torus32)
    v = trig_datum(torus32)
    w = to_primitive(v, ctx)
    assert mass(v, ctx) == pytest.approx(integrate(w * w.with_values(np.conj(w.values))).real, rel=1e-13)


def test_flat_h1_energy(torus32, flat_context):
    ctx = flat_context(torus32)
    v = gaussian(torus32, width=0.9)
    d1, d2 = gradient(v)
    dirichlet = 0.5 * (l2_norm(d1) ** 2 + l2_norm(d2) ** 2)
    assert h1_energy(v, ctx, 0.0, 2.0) == pytest.approx(dirichlet, rel=1e-12)
    quartic = integrate(v.with_values(np.abs(v.values) ** 4)).real / 4.0
    assert h1_energy(v, ctx, 1.0, 2.0) == pytest.approx(dirichlet + quartic, rel=1e-12)
    assert linear_h1_quantity(v, ctx) == pytest.approx(2.0 * dirichlet, rel=1e-12)


def test_flat_context_reduces_to_the_laplacian_norm(torus32, flat_context):
    ctx = flat_context(torus32)
    v = gaussian(torus32, width=0.9, center=(0.3, 0.0))
    row = modified_energy(v, None, ctx, 0.0, 2.0)
    assert row.f_term == 0.0
    assert row.modified_energy == pytest.approx(l2_norm(laplacian(v)) ** 2, rel=1e-12)


def test_linear_energy_is_the_weighted_norm_of_the_generator(torus32, trig_context, trig_datum):
    ctx = trig_context(torus32)
    v = trig_datum(torus32)
    generator = 1j * time_derivative(v, ctx, 0.0, 2.0).values
    expected = torus32.spacing ** 2 * np.sum(np.abs(generator) ** 2 * ctx.exp_minus.values.real ** 2)
    row = modified_energy(v, None, ctx, 0.0, 2.0)
    assert row.modified_energy == pytest.approx(expected, rel=1e-11)


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_energy_rate_matches_the_directional_derivative(torus32, trig_context, trig_datum, p):
    lam = 1.0
    ctx = trig_context(torus32, p=p)
    v = trig_datum(torus32)
    dv = time_derivative(v, ctx, lam, p)
    s = 1e-5
    plus = modified_energy(v + s * dv, None, ctx, lam, p).modified_energy
    minus = modified_energy(v - s * dv, None, ctx, lam, p).modified_energy
    row = modified_energy(v, dv, ctx, lam, p)
    rate = (plus - minus) / (2 * s)
    assert abs(rate + lam * row.h_term) < 1e-6 * max(abs(row.modified_energy), 1.0)


def test_explicit_derivative_matches_the_equation(torus32, trig_context, trig_datum):
    ctx = trig_context(torus32)
    v = trig_datum(torus32)
    implicit = modified_energy(v, None, ctx, 1.0, 2.0)
    explicit = modified_energy(v, time_derivative(v, ctx, 1.0, 2.0), ctx, 1.0, 2.0)
    assert implicit.h_term == explicit.h_term


def test_energy_checks_grid(torus16, torus32, trig_context):
    with pytest.raises(UsageError):
        modified_energy(gaussian(torus16), None, trig_context(torus32), 1.0, 2.0)


def test_ledger_accumulates_the_rate_by_trapezoid():
    ledger = EnergyLedger()
    ledger.append(_row(0.0, h=1.0))
    ledger.append(_row(2.0, h=3.0))
    ledger.append(_row(3.0, h=3.0))
    assert ledger.column("h_integral").tolist() == [0.0, 4.0, 7.0]
    assert len(ledger) == 3
    assert ledger.as_records()[1]["time"] == 2.0


def test_ledger_refuses_bad_rows():
    ledger = EnergyLedger()
    with pytest.raises(UsageError):
        ledger.append(_row(0.0, energy=math.nan))
    ledger.append(_row(1.0))
    with pytest.raises(UsageError):
        ledger.append(_row(1.0))
    with pytest.raises(UsageError):
        ledger.append(_row(0.5))


def test_residuals_vanish_for_an_exact_balance():
    times = np.linspace(0.0, 1.0, 11)
    energies = 5.0 - 2.0 * times
    residuals = audit_residuals(times, energies, np.full_like(times, 2.0), lam=1.0)
    assert np.max(np.abs(residuals)) < 1e-14
    backwards = audit_residuals(times[::-1], energies[::-1], np.full_like(times, 2.0), lam=1.0)
    assert np.max(np.abs(backwards)) < 1e-14


def test_residuals_detect_an_imbalance():
    times = np.linspace(0.0, 1.0, 5)
    residuals = audit_residuals(times, np.ones(5), np.ones(5), lam=0.5)
    assert residuals[-1] == pytest.approx(0.5)


def test_weighted_diagnostics_are_keyed_by_label(torus32):
    v = gaussian(torus32)
    specs = [NormSpec(kind=NormKind.LEBESGUE, p=2.0), NormSpec(kind=NormKind.SOBOLEV_HS, alpha=1.0, mu=-0.5)]
    values = weighted_diagnostics(v, specs)
    assert list(values) == [spec.label() for spec in specs]
    assert values[specs[0].label()] == pytest.approx(l2_norm(v), rel=1e-12)
    assert len(weighted_diagnostics(v)) == 3


def test_fit_log_growth():
    eps = [0.25, 0.125, 0.0625]
    assert fit_log_growth(eps, [abs(math.log(e)) ** 1.5 for e in eps]) == pytest.approx(1.5)
    assert fit_log_growth(eps[:1], [1.0]) is None
