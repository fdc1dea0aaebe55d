"""Pulse shapes, spectra, shifted basis and the quadrature wrapper."""

import math

import numpy as np
import pytest

from covertlab.core.errors import QuadratureError
from covertlab.engines.pulses import (
    RrcPulse,
    ShiftedBasis,
    basis_gram,
    fourier_transform_numeric,
    quad,
    quad_with_error,
    rrc_freq,
    rrc_time,
)

PAIRS = [(t0, beta) for t0 in (0.5, 1.0, 3.0) for beta in (0.0, 0.25, 0.5, 1.0)]


@pytest.mark.parametrize("t0, beta", PAIRS)
def test_unit_energy(t0, beta):
    p = RrcPulse(t0=t0, beta=beta)
    energy = quad(lambda t: float(p.time(t)) ** 2, (-t0 / 2, t0 / 2), 1e-12, breakpoints=p.time_breakpoints())
    assert energy == pytest.approx(1.0, abs=1e-8), f"pulse energy off for T0={t0}, beta={beta}"


def test_time_limited_and_flat_top():
    p = RrcPulse(t0=2.0, beta=0.0)
    t = np.linspace(-0.99, 0.99, 51)
    assert np.allclose(rrc_time(p, t), math.sqrt(1 / 2.0)), "beta=0 pulse must be flat at sqrt(1/T0)"
    assert np.all(rrc_time(RrcPulse(t0=2.0, beta=0.5), np.array([-1.01, 1.01, 5.0])) == 0.0), "pulse must vanish outside the support"
    assert float(RrcPulse(t0=1.0, beta=1.0).time(0.0)) == pytest.approx(math.sqrt(2.0))


def test_spectrum_at_zero():
    values = {beta: float(rrc_freq(RrcPulse(t0=1.0, beta=beta), 0.0)) for beta in (0.0, 0.5, 1.0)}
    assert values[0.0] == pytest.approx(1.0, rel=1e-12)
    assert values[1.0] == pytest.approx(4.0 / (math.pi * math.sqrt(2.0)), rel=1e-12)
    assert values[0.5] == pytest.approx((2.0 + 0.5 * math.pi) / (math.pi * math.sqrt(1.5)), rel=1e-12)
    assert values[1.0] < values[0.5] < values[0.0], "beta=1 must have the lowest spectral peak"


@pytest.mark.parametrize("beta", [0.25, 0.5, 1.0])
def test_spectrum_matches_numeric_transform(beta):
    p = RrcPulse(t0=1.0, beta=beta)
    for f in np.linspace(0.0, 6.0, 100):
        assert float(p.freq(f)) == pytest.approx(fourier_transform_numeric(p, float(f)), abs=1e-6), f"mismatch at f={f}"


def test_removable_pole_is_finite():
    p = RrcPulse(t0=1.0, beta=0.5)
    value = float(p.freq(p.pole))
    assert math.isfinite(value)
    assert value == pytest.approx(fourier_transform_numeric(p, p.pole), abs=1e-9)
    assert value == pytest.approx(float(p.freq(p.pole * (1 + 1e-4))), abs=1e-3), "spectrum must be continuous at the pole"


@pytest.mark.parametrize("beta", [0.0, 0.5, 1.0])
def test_band_energy_and_tail(beta):
    p = RrcPulse(t0=1.0, beta=beta)
    assert p.band_energy(0.0) == 0.0
    assert p.band_energy(40.0) == pytest.approx(1.0, abs=5e-3)
    for f in (2.0, 5.0, 10.0):
        outside = 1.0 - p.band_energy(f, abs_tol=1e-12)
        assert outside <= 2.0 * p.tail_energy_bound(f) + 1e-10, f"tail bound violated at f={f}"


@pytest.mark.parametrize("beta", [0.0, 0.3, 1.0])
def test_envelope_bounds_spectrum(beta):
    p = RrcPulse(t0=1.0, beta=beta)
    f = np.linspace(0.05, 50.0, 2000)
    assert np.all(np.abs(p.freq(f)) <= p.envelope(f) * (1 + 1e-12)), "envelope must dominate |phi_hat|"


def test_spectral_extent_contains_fraction():
    p = RrcPulse(t0=0.5, beta=0.5)
    extent = p.spectral_extent(0.99)
    assert p.band_energy(extent) == pytest.approx(0.99, abs=1e-7)
    assert p.scaled(2.0).spectral_extent(0.99) == pytest.approx(extent / 2.0, rel=1e-6), "extent scales as 1/T0"


@pytest.mark.parametrize("beta", [0.0, 0.5, 1.0])
def test_shifted_basis_is_orthonormal(beta):
    gram = basis_gram(ShiftedBasis(pulse=RrcPulse(t0=1.0, beta=beta), n=8))
    assert np.max(np.abs(gram - np.eye(8))) < 1e-8, "time-limited shifts must be orthonormal"


def test_shifted_basis_geometry():
    b = ShiftedBasis(pulse=RrcPulse(t0=2.0, beta=0.5), n=4)
    assert b.center(1) == pytest.approx(1.0)
    assert b.support(3) == pytest.approx((4.0, 6.0))
    assert float(b.evaluate(2, 3.0)) == pytest.approx(float(b.pulse.time(0.0)))


def test_quadrature_reports_error_and_raises():
    value, err = quad_with_error(math.sin, (0.0, math.pi), 1e-12)
    assert value == pytest.approx(2.0, abs=1e-12)
    assert err <= 1e-12
    value, _ = quad_with_error(lambda x: 1.0 / (1.0 + x * x) ** 1.5, (0.0, math.inf), 1e-9,
                               breakpoints=(1.0, 10.0, 100.0, 1000.0), tail=lambda f: 1.0 / (2.0 * f * f))
    assert value == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(QuadratureError, match="needs"):
        quad_with_error(math.cos, (0.0, 10.0), 1e-10, piece_width=1e-3, max_pieces=100)
    with pytest.raises(QuadratureError, match="tail bound"):
        quad_with_error(math.exp, (0.0, math.inf), 1e-10, tail=lambda f: 1.0)
