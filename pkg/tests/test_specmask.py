import math

import numpy as np
import pytest

from covertlab.engines import scheme
from covertlab.engines.maskopt import solve_p1_beta
from covertlab.engines.pulses import RrcPulse
from covertlab.engines.specmask import (
    codebook_esd,
    codeword_esd,
    concentration_check,
    check_fit,
    ensemble_esd,
    esd_peak,
    lag_sums,
)
from covertlab.schemas.covert_schemas import FrequencyGrid

PULSE = RrcPulse(t0=1.0, beta=0.5)


def _direct_esd(x, pulse, f):
    centers = (np.arange(1, x.size + 1) - 0.5) * pulse.t0
    phases = np.exp(-2j * np.pi * np.outer(f, centers))
    return np.abs(phases @ x) ** 2 * pulse.esd(f)


def test_ensemble_matches_full_enumeration():
    params = scheme.derive_params(6, 1.0, 1.0, 0.5)
    cb = scheme.enumerate_codebook(params)
    f = np.linspace(0.0, 3.0, 64)
    exact = codebook_esd(cb, PULSE)(f)
    ensemble = ensemble_esd(params.a_n, 6, PULSE)(f)
    assert np.max(np.abs(exact - ensemble)) < 1e-12, "enumerated codebook ESD must equal the ensemble ESD"


def test_codeword_esd_matches_direct_sum():
    x = np.array([1.0, -1.0, -1.0, 1.0, 1.0, 1.0, -1.0]) * 0.3
    f = np.linspace(0.0, 4.0, 97)
    assert np.allclose(codeword_esd(x, PULSE)(f), _direct_esd(x, PULSE, f), rtol=1e-10, atol=1e-14)
    assert codeword_esd(x, PULSE).total_energy == pytest.approx(float(np.sum(x * x)))


def test_codebook_esd_is_average_of_codewords():
    params = scheme.simulation_params(scheme.derive_params(10, 1.0, 1.0, 0.5), m=4, k=3)
    cb = scheme.generate_codebook(params, seed=3)
    f = np.linspace(0.0, 3.0, 41)
    average = np.mean([codeword_esd(x, PULSE)(f) for x in cb.codewords()], axis=0)
    assert np.allclose(codebook_esd(cb, PULSE)(f), average, rtol=1e-10, atol=1e-14)


def test_lag_sums_are_exact_integers():
    signs = np.array([[1, -1, 1, 1], [-1, -1, 1, -1]], dtype=np.int8)
    expected = [8, -2, 0, 2]
    assert lag_sums(signs).tolist() == expected


def test_ensemble_peak_is_at_zero():
    profile = ensemble_esd(0.5, 20, PULSE)
    assert esd_peak(profile, 1.0) == pytest.approx(float(profile(0.0)))
    assert profile.total_energy == pytest.approx(0.25 * 20)
    assert profile.band_energy(50.0) == pytest.approx(profile.total_energy, rel=1e-4)


def test_fit_at_and_below_the_optimum(mask):
    t0 = solve_p1_beta(mask, 0.5, tol=1e-6)
    fits = check_fit(ensemble_esd(1.0, 1, RrcPulse(t0=t0, beta=0.5)), mask)
    short = check_fit(ensemble_esd(1.0, 1, RrcPulse(t0=0.9 * t0, beta=0.5)), mask)
    assert fits.fits, f"optimal duration {t0} must fit: {fits.margins}"
    assert not short.fits, "a 10% shorter pulse must violate the mask"
    assert len(fits.margins) == len(mask.constraints)
    assert 0 <= fits.binding < len(mask.constraints)
    assert min(min(m.db_margin, m.energy_margin) for m in fits.margins) < 1e-3, "the optimum must be tight"


def test_fit_is_scale_invariant(mask):
    pulse = RrcPulse(t0=4.0, beta=1.0)
    a = check_fit(ensemble_esd(1.0, 1, pulse), mask)
    b = check_fit(ensemble_esd(0.2, 50, pulse), mask)
    for ma, mb in zip(a.margins, b.margins):
        assert ma.db_margin == pytest.approx(mb.db_margin, abs=1e-9)
        assert ma.in_band_fraction == pytest.approx(mb.in_band_fraction, abs=1e-9)


def test_slack_tightens_both_clauses(mask):
    profile = ensemble_esd(1.0, 1, RrcPulse(t0=8.0, beta=1.0))
    loose = check_fit(profile, mask)
    tight = check_fit(profile, mask, slack=0.5)
    assert loose.fits
    assert not tight.fits, "eta / (1 - u) above one cannot be met"
    for lo, hi in zip(loose.margins, tight.margins):
        assert hi.threshold == pytest.approx(lo.threshold / 3.0)
        assert hi.energy_margin < lo.energy_margin


def test_codebook_esd_fit_uses_grid_peak(mask):
    params = scheme.simulation_params(scheme.derive_params(32, 1.0, 1.0, 0.5), m=32, k=8)
    cb = scheme.generate_codebook(params, seed=5)
    report = check_fit(codebook_esd(cb, RrcPulse(t0=8.0, beta=1.0)), mask, FrequencyGrid(points=2048, cross_check=False))
    assert report.total_energy == pytest.approx(cb.a_n**2 * cb.n)
    assert report.peak > 0


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_concentration_holds_for_random_codebooks(seed):
    params = scheme.simulation_params(scheme.derive_params(16, 1.0, 1.0, 0.5), m=64, k=64)
    report = concentration_check(scheme.generate_codebook(params, seed=seed), PULSE)
    assert report.holds, f"concentration bound failed for seed {seed}: {report}"
    assert report.cross_term_bound == pytest.approx(4096**0.75)
    assert report.ratio_bound == pytest.approx(2.0)
    assert report.failure_probability_bound < 1e-10


@pytest.mark.slow
def test_concentration_rate_over_many_codebooks():
    params = scheme.simulation_params(scheme.derive_params(16, 1.0, 1.0, 0.5), m=64, k=64)
    held = sum(concentration_check(scheme.generate_codebook(params, seed=s), PULSE,
                                   FrequencyGrid(points=512)).holds for s in range(200))
    assert held >= 195, f"concentration held in only {held} of 200 codebooks"


def test_concentration_needs_two_codewords():
    params = scheme.simulation_params(scheme.derive_params(8, 1.0, 1.0, 0.5), m=1, k=1)
    with pytest.raises(ValueError, match="MK >= 2"):
        concentration_check(scheme.generate_codebook(params, seed=0), PULSE)


def test_out_of_band_peak_is_refined(mask):
    profile = ensemble_esd(1.0, 1, RrcPulse(t0=2.0, beta=0.0))
    report = check_fit(profile, mask)
    first = report.margins[0]
    f = np.linspace(first.alpha_w, first.alpha_w + 3.0, 20001)
    assert first.out_of_band_peak >= float(np.max(profile(f))) * (1 - 1e-9)
    assert math.isfinite(first.db_margin)
