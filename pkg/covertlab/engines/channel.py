"""AWGN channels: exact coefficient-domain simulation and an oversampled waveform harness.

The coefficient path is what every reliability and covertness statistic uses. The
waveform path synthesizes sum_i x_i g_i(t) plus band-limited white noise on a sample
grid and projects it back with a trapezoid-rule matched filter; it carries a
discretization bias that shrinks as the sample rate and noise bandwidth grow.
"""

import logging
import math
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import integrate

from covertlab.core import streams
from covertlab.core.errors import ConfigError
from covertlab.engines.pulses import RrcPulse, ShiftedBasis
from covertlab.reporting.emitters import write_csv

logger = logging.getLogger(__name__)

COEFF_DOMAIN = "awgn"
WAVEFORM_DOMAIN = "waveform"


class AwgnSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    intensity: float = Field(gt=0, description="Noise parameter N; each coefficient has variance N/2.")
    seed: int = Field(default=0, ge=0)

    @property
    def std(self) -> float:
        return math.sqrt(self.intensity / 2.0)


def transmit_coeff(x: ArrayLike, spec: AwgnSpec, trial: int) -> np.ndarray:
    """z_i = x_i + w_i with w_i iid Normal(0, N/2) from stream (seed, trial)."""
    x = np.asarray(x, dtype=float)
    return x + streams.gaussian(spec.seed, COEFF_DOMAIN, trial, x.size, scale=spec.std).reshape(x.shape)


def awgn_samples(spec: AwgnSpec, trials: int, n: int, first_trial: int = 0) -> np.ndarray:
    """Noise bank of shape (trials, n); row t equals the noise of channel trial first_trial + t."""
    return np.stack([streams.gaussian(spec.seed, COEFF_DOMAIN, first_trial + t, n, scale=spec.std)
                     for t in range(trials)])


class WaveformSim(BaseModel):
    model_config = ConfigDict(frozen=True)

    sample_rate: float = Field(gt=0, description="Samples per second.")
    duration: float | None = Field(default=None, gt=0, description="Seconds; defaults to n * T0.")
    noise_bandwidth: float | None = Field(default=None, gt=0, description="Hz; defaults to sample_rate / 2.")

    @model_validator(mode="after")
    def _nyquist(self) -> "WaveformSim":
        if self.noise_bandwidth is not None and self.noise_bandwidth > self.sample_rate / 2.0:
            raise ValueError(f"noise_bandwidth {self.noise_bandwidth} exceeds sample_rate/2 = {self.sample_rate / 2.0}")
        return self

    @property
    def bandwidth(self) -> float:
        return self.noise_bandwidth if self.noise_bandwidth is not None else self.sample_rate / 2.0

    def check_pulse(self, pulse: RrcPulse) -> None:
        extent = pulse.spectral_extent()
        if self.sample_rate < 8.0 * extent:
            raise ConfigError(f"sample_rate {self.sample_rate:.6g} Hz is below 8 x spectral extent {extent:.6g} Hz",
                              stage="channel")

    def grid(self, n: int, pulse: RrcPulse) -> np.ndarray:
        duration = self.duration if self.duration is not None else n * pulse.t0
        samples = int(round(duration * self.sample_rate)) + 1
        return np.arange(samples) / self.sample_rate


def _band_limited_noise(spec: AwgnSpec, sim: WaveformSim, samples: int, trial: int) -> np.ndarray:
    # per-sample variance (N/2) * fs gives inner products with unit-energy functions variance N/2
    noise = streams.gaussian(spec.seed, WAVEFORM_DOMAIN, trial, samples,
                             scale=math.sqrt(spec.intensity / 2.0 * sim.sample_rate))
    if sim.bandwidth >= sim.sample_rate / 2.0:
        return noise
    spectrum = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(samples, d=1.0 / sim.sample_rate)
    spectrum[freqs > sim.bandwidth] = 0.0
    return np.fft.irfft(spectrum, n=samples)


def transmit_waveform(x: ArrayLike, pulse: RrcPulse, sim: WaveformSim, spec: AwgnSpec | None,
                      trial: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sampled sum_i x_i g_i(t) plus band-limited noise; spec=None gives the noiseless waveform."""
    x = np.asarray(x, dtype=float)
    sim.check_pulse(pulse)
    t = sim.grid(x.size, pulse)
    basis = ShiftedBasis(pulse=pulse, n=x.size)
    signal = np.zeros_like(t)
    for i in range(1, x.size + 1):
        if x[i - 1] == 0.0:
            continue
        sl = _support_slice(t, basis, i)
        signal[sl] += x[i - 1] * basis.evaluate(i, t[sl])
    if spec is not None:
        signal += _band_limited_noise(spec, sim, t.size, trial)
    return t, signal


def _support_slice(t: np.ndarray, basis: ShiftedBasis, i: int) -> slice:
    lo, hi = basis.support(i)
    start = max(int(np.searchsorted(t, lo, side="left")) - 1, 0)
    stop = min(int(np.searchsorted(t, hi, side="right")) + 1, t.size)
    return slice(start, stop)


def matched_filter(t: np.ndarray, signal: np.ndarray, pulse: RrcPulse, n: int) -> np.ndarray:
    """Projections int signal(t) g_i(t) dt, i = 1..n, by the trapezoid rule on the sample grid."""
    basis = ShiftedBasis(pulse=pulse, n=n)
    out = np.empty(n)
    for i in range(1, n + 1):
        sl = _support_slice(t, basis, i)
        out[i - 1] = integrate.trapezoid(signal[sl] * basis.evaluate(i, t[sl]), t[sl])
    return out


def refinement_ladder(x: ArrayLike, pulse: RrcPulse, sample_rates: list[float]) -> list[float]:
    """Largest noiseless matched-filter error at each sample rate."""
    x = np.asarray(x, dtype=float)
    gaps = []
    for rate in sample_rates:
        sim = WaveformSim(sample_rate=rate)
        t, signal = transmit_waveform(x, pulse, sim, None)
        gaps.append(float(np.max(np.abs(matched_filter(t, signal, pulse, x.size) - x))))
    logger.debug("matched-filter gaps %s at rates %s", gaps, sample_rates)
    return gaps


def waveform_dump(path: str | Path, t: np.ndarray, signal: np.ndarray) -> Path:
    return write_csv(path, ["t", "value"], zip(t.tolist(), signal.tolist()))
