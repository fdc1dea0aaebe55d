"""Energy spectral densities of codewords and codebooks, and spectral-mask checks.

Every ESD handled here has the form

    E(f) = |phi_hat(f)|^2 * (c_0 + 2 * sum_{d>=1} c_d cos(2 pi d T0 f))

where c_d is the (codebook-averaged) lag-d autocorrelation of the BPSK coefficients.
Because the shifted pulses are orthonormal, the total energy is exactly c_0.
"""

import logging
import math
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field
from scipy import optimize

from covertlab.core.errors import GridTooCoarse
from covertlab.engines.pulses import RrcPulse, quad
from covertlab.schemas.covert_schemas import (
    ConcentrationReport,
    ConstraintMargin,
    FitReport,
    FrequencyGrid,
    SpectralMask,
)

if TYPE_CHECKING:
    from covertlab.engines.scheme import Codebook

logger = logging.getLogger(__name__)

_CHUNK = 512


class EsdProfile(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    pulse: RrcPulse
    lags: np.ndarray = Field(description="c_0 .. c_{n-1}: averaged lag autocorrelations.")
    kind: str = Field(default="codebook", description="ensemble | codeword | codebook")

    @property
    def total_energy(self) -> float:
        return float(self.lags[0])

    @property
    def poly_bound(self) -> float:
        """Upper bound on the trigonometric factor."""
        return float(self.lags[0] + 2.0 * np.abs(self.lags[1:]).sum())

    def poly(self, f: ArrayLike) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        flat = f.reshape(-1)
        out = np.full(flat.shape, self.lags[0])
        active = np.flatnonzero(self.lags[1:]) + 1
        if active.size:
            phase = 2.0 * math.pi * self.pulse.t0
            for start in range(0, flat.size, _CHUNK):
                block = flat[start:start + _CHUNK]
                out[start:start + _CHUNK] += 2.0 * np.cos(phase * np.outer(block, active)) @ self.lags[active]
        return out.reshape(f.shape)

    def __call__(self, f: ArrayLike) -> np.ndarray:
        return self.pulse.esd(f) * self.poly(f)

    def upper_envelope(self, f: ArrayLike) -> np.ndarray:
        return self.poly_bound * np.square(self.pulse.envelope(f))

    def band_energy(self, f: float) -> float:
        """Energy inside [-f, f]."""
        if self.kind == "ensemble":
            return self.total_energy * self.pulse.band_energy(f)
        breaks = [self.pulse.pole] if self.pulse.pole is not None and self.pulse.pole < f else []
        scale = max(self.total_energy, 1e-300)
        return 2.0 * scale * quad(lambda x: float(self(x)) / scale, (0.0, f), breakpoints=breaks,
                                  piece_width=1.0 / self.pulse.t0)

    def table(self, f_max: float, points: int = 4096) -> tuple[np.ndarray, np.ndarray]:
        f = np.linspace(0.0, f_max, points)
        return f, self(f)


def codeword_esd(x: ArrayLike, pulse: RrcPulse) -> EsdProfile:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("codeword must be a non-empty vector")
    n = x.size
    lags = np.array([np.dot(x[: n - d], x[d:]) for d in range(n)])
    return EsdProfile(pulse=pulse, lags=lags, kind="codeword")


def ensemble_esd(a_n: float, n: int, pulse: RrcPulse) -> EsdProfile:
    if a_n <= 0 or n < 1:
        raise ValueError("ensemble ESD needs a_n > 0 and n >= 1")
    lags = np.zeros(n)
    lags[0] = a_n**2 * n
    return EsdProfile(pulse=pulse, lags=lags, kind="ensemble")


def lag_sums(signs: np.ndarray) -> np.ndarray:
    """Sum over rows of the lag-d autocorrelation of +-1 rows, d = 0..n-1 (exact integers)."""
    rows, n = signs.shape
    total = np.zeros(n)
    size = 2 * n
    for start in range(0, rows, 4096):
        spectrum = np.fft.rfft(signs[start:start + 4096].astype(float), n=size, axis=1)
        total += np.fft.irfft(np.abs(spectrum) ** 2, n=size, axis=1)[:, :n].sum(axis=0)
    return np.rint(total)


def codebook_esd(cb: "Codebook", pulse: RrcPulse) -> EsdProfile:
    """Pointwise average of the codeword ESDs over all MK codewords."""
    signs = cb.sign_matrix()
    if signs.shape[0] == 0:
        raise ValueError("codebook is empty")
    lags = cb.a_n**2 * lag_sums(signs) / signs.shape[0]
    return EsdProfile(pulse=pulse, lags=lags, kind="codebook")


def _refine_max(profile: EsdProfile, grid_f: np.ndarray, values: np.ndarray) -> float:
    k = int(np.argmax(values))
    lo = grid_f[max(k - 1, 0)]
    hi = grid_f[min(k + 1, grid_f.size - 1)]
    best = float(values[k])
    if hi > lo:
        res = optimize.minimize_scalar(lambda f: -float(profile(f)), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12 * max(hi, 1.0)})
        best = max(best, -float(res.fun))
    return best


def esd_peak(profile: EsdProfile, band_edge: float, points: int = 4096) -> float:
    """[E]_max: E(0) for the ensemble, else grid search on [0, band_edge] plus refinement."""
    if profile.kind == "ensemble":
        return float(profile(0.0))
    f = np.linspace(0.0, band_edge, points)
    return _refine_max(profile, f, profile(f))


def _region_end(profile: EsdProfile, start: float, threshold: float) -> float:
    """Frequency beyond which the certified envelope stays below the threshold."""
    end = max(start, 1.0 / profile.pulse.t0)
    while float(profile.upper_envelope(end)) >= threshold:
        end *= 2.0
    return max(end, start + 1.0 / profile.pulse.t0)


def _out_of_band_peak(profile: EsdProfile, start: float, end: float, points: int) -> float:
    f = np.linspace(start, end, points)
    return _refine_max(profile, f, profile(f))


def check_fit(profile: EsdProfile, mask: SpectralMask, grid: FrequencyGrid | None = None,
              slack: float = 0.0) -> FitReport:
    """Verify both clauses of every mask constraint; margins > 0 mean the profile fits.

    With ``slack`` = u in (0, 1) the dB threshold is scaled by (1-u)/(1+u) and the
    required in-band fraction by 1/(1-u).
    """
    grid = grid or FrequencyGrid()
    peak = esd_peak(profile, mask.constraints[0].alpha * mask.w, grid.points)
    total = profile.total_energy
    margins: list[ConstraintMargin] = []
    for i, c in enumerate(mask.constraints):
        edge = c.alpha * mask.w
        threshold = c.v * peak * (1.0 - slack) / (1.0 + slack)
        end = _region_end(profile, edge, threshold)
        out_peak = _out_of_band_peak(profile, edge, end, grid.points)
        if grid.cross_check:
            coarse = _out_of_band_peak(profile, edge, end, grid.points // 2)
            if abs(coarse - out_peak) > grid.rel_tol * max(out_peak, threshold * 1e-12):
                raise GridTooCoarse(
                    f"constraint {i}: out-of-band peak {out_peak:.12g} vs {coarse:.12g} at half resolution",
                    stage="check_fit")
        fraction = min(profile.band_energy(edge) / total, 1.0)
        required = c.eta / (1.0 - slack)
        db_margin = math.inf if out_peak <= 0 else 10.0 * math.log10(threshold / out_peak)
        margins.append(ConstraintMargin(index=i, alpha_w=edge, threshold=threshold, out_of_band_peak=out_peak,
                                        db_margin=db_margin, in_band_fraction=fraction,
                                        energy_margin=fraction - required))
    binding = min(range(len(margins)), key=lambda j: min(margins[j].db_margin, 10.0 * margins[j].energy_margin))
    return FitReport(fits=all(m.passes for m in margins), peak=peak, total_energy=total,
                     margins=margins, binding=binding)


def concentration_check(cb: "Codebook", pulse: RrcPulse, grid: FrequencyGrid | None = None,
                        f_max: float | None = None) -> ConcentrationReport:
    """Cross-term and ESD-deviation bounds for a random codebook."""
    grid = grid or FrequencyGrid()
    signs = cb.sign_matrix().astype(float)
    size, n = signs.shape
    if size < 2:
        raise ValueError("concentration check needs MK >= 2")
    gram = signs.T @ signs
    np.fill_diagonal(gram, 0.0)
    cross_bound = size ** 0.75
    i1, i2 = np.unravel_index(int(np.argmax(np.abs(gram))), gram.shape)
    max_cross = float(abs(gram[i1, i2]))

    lags = lag_sums(cb.sign_matrix()) / size
    profile = EsdProfile(pulse=pulse, lags=lags, kind="codebook")
    f_max = f_max if f_max is not None else pulse.spectral_extent()
    f = np.linspace(0.0, f_max, grid.points)
    deviation = np.abs(profile.poly(f) - lags[0]) / lags[0]
    k = int(np.argmax(deviation))
    worst = float(deviation[k])
    ratio_bound = n / size ** 0.25

    cross_ok = max_cross <= cross_bound
    ratio_ok = worst <= ratio_bound
    log_fail = math.log(2.0 * n * n) - math.sqrt(size) / 2.0
    return ConcentrationReport(
        holds=cross_ok and ratio_ok,
        worst_ratio=worst,
        ratio_bound=ratio_bound,
        max_cross_term=max_cross,
        cross_term_bound=cross_bound,
        violating_pair=None if cross_ok else (int(i1) + 1, int(i2) + 1),
        violating_frequency=None if ratio_ok else float(f[k]),
        failure_probability_bound=min(1.0, math.exp(log_fail)),
    )
