import math

import numpy as np
import pytest
from scipy import stats

from covertlab.core.errors import ConfigError
from covertlab.engines.channel import (
    AwgnSpec,
    WaveformSim,
    awgn_samples,
    matched_filter,
    refinement_ladder,
    transmit_coeff,
    transmit_waveform,
    waveform_dump,
)
from covertlab.engines.pulses import RrcPulse

PULSE = RrcPulse(t0=1.0, beta=0.5)


def _rate(pulse: RrcPulse, factor: float = 1.0) -> float:
    return math.ceil(8.0 * pulse.spectral_extent()) * factor


def test_noise_std():
    assert AwgnSpec(intensity=2.0).std == pytest.approx(1.0)
    assert AwgnSpec(intensity=0.5).std == pytest.approx(0.5)
    with pytest.raises(ValueError):
        AwgnSpec(intensity=0.0)


def test_coefficient_channel_is_seeded():
    spec = AwgnSpec(intensity=1.0, seed=9)
    x = np.full(32, 0.4)
    assert np.array_equal(transmit_coeff(x, spec, 3), transmit_coeff(x, spec, 3))
    assert not np.array_equal(transmit_coeff(x, spec, 3), transmit_coeff(x, spec, 4))
    bank = awgn_samples(spec, 5, 32)
    assert bank.shape == (5, 32)
    assert np.allclose(transmit_coeff(x, spec, 3) - x, bank[3]), "noise bank row t must be the noise of trial t"
    shifted = awgn_samples(spec, 2, 32, first_trial=3)
    assert np.array_equal(shifted[0], bank[3])


def test_coefficient_noise_variance():
    spec = AwgnSpec(intensity=1.6, seed=2)
    noise = awgn_samples(spec, 200, 50).ravel()
    assert noise.var() == pytest.approx(0.8, rel=0.05)
    assert abs(noise.mean()) < 4 * math.sqrt(0.8 / noise.size)


def test_waveform_sim_validation():
    with pytest.raises(ValueError, match="exceeds sample_rate/2"):
        WaveformSim(sample_rate=10.0, noise_bandwidth=6.0)
    assert WaveformSim(sample_rate=10.0).bandwidth == 5.0
    with pytest.raises(ConfigError, match="spectral extent"):
        WaveformSim(sample_rate=1.0).check_pulse(PULSE)


def test_grid_spans_the_block():
    t = WaveformSim(sample_rate=32.0).grid(5, RrcPulse(t0=2.0, beta=0.5))
    assert t[0] == 0.0 and t[-1] == pytest.approx(10.0)
    assert t.size == 321


def test_noiseless_projection_recovers_coefficients():
    x = np.array([0.3, -0.3, -0.3, 0.3, 0.3, -0.3])
    t, signal = transmit_waveform(x, PULSE, WaveformSim(sample_rate=_rate(PULSE, 8)), None)
    assert np.max(np.abs(matched_filter(t, signal, PULSE, x.size) - x)) < 1e-3


def test_refinement_ladder_shrinks():
    x = np.array([1.0, -1.0, 1.0, 1.0, -1.0])
    base = _rate(PULSE)
    gaps = refinement_ladder(x, PULSE, [base, 4 * base, 16 * base])
    assert len(gaps) == 3
    assert gaps[-1] <= gaps[0], f"finer sampling must not worsen the projection: {gaps}"
    assert gaps[-1] < 1e-3


@pytest.mark.slow
def test_matched_filter_noise_matches_coefficient_channel():
    spec = AwgnSpec(intensity=1.0, seed=5)
    sim = WaveformSim(sample_rate=_rate(PULSE, 4))
    x = np.array([0.2, -0.2, 0.2, 0.2])
    noise = []
    for trial in range(400):
        t, signal = transmit_waveform(x, PULSE, sim, spec, trial)
        noise.append(matched_filter(t, signal, PULSE, x.size) - x)
    noise = np.concatenate(noise)
    assert noise.var() == pytest.approx(spec.std**2, rel=0.15)
    result = stats.kstest(noise, "norm", args=(0.0, spec.std))
    assert result.pvalue > 1e-3, f"projected noise is not N(0, N/2): {result}"


def test_waveform_dump(tmp_path):
    t, signal = transmit_waveform(np.array([1.0, -1.0]), PULSE, WaveformSim(sample_rate=_rate(PULSE)), None)
    path = waveform_dump(tmp_path / "wave.csv", t, signal)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,value"
    assert len(lines) == t.size + 1
