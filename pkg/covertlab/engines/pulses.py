"""Root-raised-cosine carrier pulses, the shifted orthonormal basis and quadrature.

The pulse is time-limited to [-T0/2, T0/2]: a flat top of height sqrt((1+beta)/T0)
on |t| <= (1-beta)/(1+beta) * T0/2 followed by a half-cosine roll-off. Its
spectrum is evaluated in the form

    phi_hat(f) = sqrt(T0) / (pi sqrt(1+beta))
                 * [4 beta cos(pi T0 f) + (1-beta) pi sinc(kappa T0 f)]
                 / [1 - (4 beta T0 f / (1+beta))^2],      kappa = (1-beta)/(1+beta)

which is regular at f = 0 and reduces to sqrt(T0) sinc(T0 f) at beta = 0. The
points 4 beta T0 f/(1+beta) = +-1 are removable singularities and are evaluated by
direct cosine-transform quadrature of the time pulse.
"""

import logging
import math
import warnings
from collections.abc import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field
from scipy import integrate, optimize, special

from covertlab.core.config import COVERT_QUAD_TOL
from covertlab.core.errors import QuadratureError

logger = logging.getLogger(__name__)

# relative distance to a spectral pole inside which the closed form is not used
POLE_WINDOW = 1e-6
MAX_PIECES = 20000


class RrcPulse(BaseModel):
    model_config = ConfigDict(frozen=True)

    t0: float = Field(gt=0, description="Pulse duration T0 in seconds.")
    beta: float = Field(ge=0, le=1, description="Roll-off factor.")

    @property
    def flat_edge(self) -> float:
        """|t| where the flat top hands over to the cosine roll-off."""
        return (1.0 - self.beta) / (1.0 + self.beta) * self.t0 / 2.0

    @property
    def pole(self) -> float | None:
        """Positive frequency of the removable spectral singularity (None for beta = 0)."""
        if self.beta == 0:
            return None
        return (1.0 + self.beta) / (4.0 * self.beta * self.t0)

    @property
    def peak(self) -> float:
        return math.sqrt((1.0 + self.beta) / self.t0)

    def time(self, t: ArrayLike) -> np.ndarray:
        return rrc_time(self, t)

    def freq(self, f: ArrayLike) -> np.ndarray:
        return rrc_freq(self, f)

    def esd(self, f: ArrayLike) -> np.ndarray:
        return np.square(rrc_freq(self, f))

    def scaled(self, c: float) -> "RrcPulse":
        return RrcPulse(t0=c * self.t0, beta=self.beta)

    def time_breakpoints(self, center: float = 0.0) -> list[float]:
        half, edge = self.t0 / 2.0, self.flat_edge
        return sorted({center - half, center - edge, center + edge, center + half})

    def envelope(self, f: ArrayLike) -> np.ndarray:
        """Certified upper bound on |phi_hat(f)| for f != 0.

        Total variation of the pulse bounds |phi_hat| by peak/(pi |f|); for beta > 0
        and 4 beta T0 |f|/(1+beta) >= sqrt(2) the closed form also gives an f^-2 bound.
        """
        f = np.abs(np.asarray(f, dtype=float))
        with np.errstate(divide="ignore"):
            bound = self.peak / (math.pi * f)
            if self.beta > 0:
                quartic = self._quartic_coefficient(f) / np.square(f)
                bound = np.where(f >= self._quartic_start, np.minimum(bound, quartic), bound)
        return bound

    @property
    def _quartic_start(self) -> float:
        return math.sqrt(2.0) * (1.0 + self.beta) / (4.0 * self.beta * self.t0)

    def _quartic_coefficient(self, f: ArrayLike) -> np.ndarray:
        b, t0 = self.beta, self.t0
        scale = math.sqrt(t0) / (math.pi * math.sqrt(1.0 + b))
        return scale * (4.0 * b + (1.0 + b) / (t0 * np.asarray(f, dtype=float))) * (1.0 + b) ** 2 / (8.0 * b * b * t0 * t0)

    def tail_energy_bound(self, f: float) -> float:
        """Upper bound on the one-sided tail energy  int_f^inf |phi_hat|^2  (exact for beta = 0)."""
        f = float(f)
        if f <= 0:
            return 0.5
        if self.beta == 0:
            x = math.pi * self.t0 * f
            return (math.sin(x) ** 2 / x + math.pi / 2.0 - float(special.sici(2.0 * x)[0])) / math.pi
        start = self._quartic_start
        if f >= start:
            return float(self._quartic_coefficient(f)) ** 2 / (3.0 * f**3)
        tv_part = self.peak**2 / math.pi**2 * (1.0 / f - 1.0 / start)
        return min(0.5, tv_part + float(self._quartic_coefficient(start)) ** 2 / (3.0 * start**3))

    def band_energy(self, f: float, abs_tol: float | None = None) -> float:
        """Energy of the pulse inside [-f, f]."""
        f = abs(float(f))
        if f == 0:
            return 0.0
        x = self.t0 * f
        if self.beta == 0:
            s = math.pi * x
            return (2.0 / math.pi) * (float(special.sici(2.0 * s)[0]) - math.sin(s) ** 2 / s)
        unit = RrcPulse(t0=1.0, beta=self.beta)
        breaks = [unit.pole] if unit.pole is not None and unit.pole < x else []
        return 2.0 * quad(unit.esd, (0.0, x), abs_tol, breakpoints=breaks, piece_width=1.0)

    def spectral_extent(self, fraction: float = 0.999) -> float:
        """Smallest F with at least ``fraction`` of the energy inside [-F, F]."""
        hi = 1.0 / self.t0
        while self.band_energy(hi, abs_tol=1e-12) < fraction:
            hi *= 2.0
        return float(optimize.brentq(lambda f: self.band_energy(f, abs_tol=1e-12) - fraction, 0.0, hi, xtol=1e-9 / self.t0))


def rrc_time(p: RrcPulse, t: ArrayLike) -> np.ndarray:
    """Time-domain pulse; zero outside [-T0/2, T0/2]."""
    at = np.abs(np.asarray(t, dtype=float))
    half, edge = p.t0 / 2.0, p.flat_edge
    out = np.where(at <= edge, p.peak, 0.0)
    if p.beta > 0:
        rolloff = at - edge
        omega = math.pi * (1.0 + p.beta) / (p.t0 * p.beta)
        cosine = np.sqrt(np.clip(1.0 + np.cos(omega * rolloff), 0.0, None) * (1.0 + p.beta) / (2.0 * p.t0))
        out = np.where((at > edge) & (at <= half), cosine, out)
    return out


def _closed_form_freq(p: RrcPulse, f: np.ndarray) -> np.ndarray:
    b, t0 = p.beta, p.t0
    kappa = (1.0 - b) / (1.0 + b)
    numerator = 4.0 * b * np.cos(math.pi * t0 * f) + (1.0 - b) * math.pi * np.sinc(kappa * t0 * f)
    denominator = 1.0 - np.square(4.0 * b * t0 * f / (1.0 + b))
    with np.errstate(divide="ignore", invalid="ignore"):
        return math.sqrt(t0) / (math.pi * math.sqrt(1.0 + b)) * numerator / denominator


def fourier_transform_numeric(p: RrcPulse, f: float, abs_tol: float = 1e-12) -> float:
    """phi_hat(f) as 2 * int_0^{T0/2} phi(t) cos(2 pi f t) dt by quadrature."""
    edge, half = p.flat_edge, p.t0 / 2.0
    if p.beta == 0:
        return float(_closed_form_freq(p, np.asarray(f, dtype=float)))
    flat = 2.0 * p.peak * (edge if f == 0 else math.sin(2.0 * math.pi * f * edge) / (2.0 * math.pi * f))
    rolloff = quad(lambda t: float(rrc_time(p, t)) * math.cos(2.0 * math.pi * f * t), (edge, half), abs_tol)
    return flat + 2.0 * rolloff


def rrc_freq(p: RrcPulse, f: ArrayLike) -> np.ndarray:
    """Spectrum of the pulse (real and even)."""
    f = np.asarray(f, dtype=float)
    out = _closed_form_freq(p, f)
    if p.pole is not None:
        near = np.abs(np.abs(f) / p.pole - 1.0) < POLE_WINDOW
        if np.any(near):
            out = np.array(out, dtype=float, copy=True)
            flat_out = out.reshape(-1)
            for idx in np.flatnonzero(near.reshape(-1)):
                flat_out[idx] = fourier_transform_numeric(p, float(abs(f.reshape(-1)[idx])))
    return out


class ShiftedBasis(BaseModel):
    """g_i(t) = phi(t - (i - 0.5) * spacing) for i = 1..n; spacing defaults to T0."""
    model_config = ConfigDict(frozen=True)

    pulse: RrcPulse
    n: int = Field(ge=1)
    spacing: float | None = Field(default=None, gt=0)

    @property
    def step(self) -> float:
        return self.spacing if self.spacing is not None else self.pulse.t0

    def center(self, i: int) -> float:
        return (i - 0.5) * self.step

    def support(self, i: int) -> tuple[float, float]:
        c = self.center(i)
        return c - self.pulse.t0 / 2.0, c + self.pulse.t0 / 2.0

    def evaluate(self, i: int, t: ArrayLike) -> np.ndarray:
        return rrc_time(self.pulse, np.asarray(t, dtype=float) - self.center(i))


def basis_gram(b: ShiftedBasis, tol: float | None = None) -> np.ndarray:
    """Matrix of inner products int g_i g_j, by quadrature over overlapping supports."""
    tol = COVERT_QUAD_TOL if tol is None else tol
    gram = np.zeros((b.n, b.n))
    for i in range(1, b.n + 1):
        for j in range(i, b.n + 1):
            lo = max(b.support(i)[0], b.support(j)[0])
            hi = min(b.support(i)[1], b.support(j)[1])
            if hi <= lo:
                continue
            breaks = b.pulse.time_breakpoints(b.center(i)) + b.pulse.time_breakpoints(b.center(j))
            value = quad(lambda t: float(b.evaluate(i, t) * b.evaluate(j, t)), (lo, hi), tol, breakpoints=breaks)
            gram[i - 1, j - 1] = gram[j - 1, i - 1] = value
    return gram


def quad_with_error(
    integrand: Callable[[float], float],
    interval: tuple[float, float],
    abs_tol: float | None = None,
    *,
    breakpoints: Sequence[float] = (),
    piece_width: float | None = None,
    tail: Callable[[float], float] | None = None,
    max_pieces: int = MAX_PIECES,
) -> tuple[float, float]:
    """Adaptive Gauss-Kronrod quadrature (QUADPACK) with subdivision seeds.

    Finite intervals are split at ``breakpoints`` and into pieces no wider than
    ``piece_width``; each piece gets an equal share of ``abs_tol``. An infinite end
    is truncated at |x| = F when ``tail(F)`` (a bound on the integral of |integrand|
    beyond F, one side) is below abs_tol/10; without ``tail`` the infinite interval
    is handed to QUADPACK's transformed rule. Raises QuadratureError when the summed
    error estimate exceeds abs_tol.
    """
    abs_tol = COVERT_QUAD_TOL if abs_tol is None else abs_tol
    lo, hi = float(interval[0]), float(interval[1])
    if lo == hi:
        return 0.0, 0.0
    if lo > hi:
        value, err = quad_with_error(integrand, (hi, lo), abs_tol, breakpoints=breakpoints,
                                     piece_width=piece_width, tail=tail, max_pieces=max_pieces)
        return -value, err

    infinite_sides = int(math.isinf(lo)) + int(math.isinf(hi))
    budget = abs_tol
    truncation = 0.0
    if infinite_sides and tail is None:
        return _scipy_quad(integrand, lo, hi, abs_tol)
    if infinite_sides:
        finite = [abs(x) for x in (lo, hi, *breakpoints) if math.isfinite(x)]
        cut = max(finite + [1.0])
        share = abs_tol / (10.0 * infinite_sides)
        while tail(cut) > share:
            cut *= 2.0
            if not math.isfinite(cut):
                raise QuadratureError("tail bound never falls below tolerance", math.inf, abs_tol)
        lo = -cut if math.isinf(lo) else lo
        hi = cut if math.isinf(hi) else hi
        truncation = infinite_sides * tail(cut)
        budget = abs_tol - truncation

    edges = sorted({lo, hi, *(x for x in breakpoints if lo < x < hi)})
    if piece_width is not None:
        refined = []
        for a, b in zip(edges[:-1], edges[1:]):
            count = max(1, math.ceil((b - a) / piece_width))
            refined.extend(np.linspace(a, b, count + 1)[:-1].tolist())
        edges = refined + [hi]
    pieces = len(edges) - 1
    if pieces > max_pieces:
        raise QuadratureError(f"interval [{lo}, {hi}] needs {pieces} pieces", math.inf, abs_tol)

    total, err = 0.0, truncation
    for a, b in zip(edges[:-1], edges[1:]):
        value, piece_err = _scipy_quad(integrand, a, b, budget / pieces, check=False)
        total += value
        err += piece_err
    if err > abs_tol:
        raise QuadratureError(f"quadrature on [{lo}, {hi}] did not converge", err, abs_tol)
    return total, err


def quad(
    integrand: Callable[[float], float],
    interval: tuple[float, float],
    abs_tol: float | None = None,
    **kwargs,
) -> float:
    return quad_with_error(integrand, interval, abs_tol, **kwargs)[0]


def _scipy_quad(integrand, a: float, b: float, abs_tol: float, check: bool = True) -> tuple[float, float]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        result = integrate.quad(lambda x: float(integrand(x)), a, b, epsabs=abs_tol, epsrel=0.0,
                                limit=500, full_output=1)
    value, err = float(result[0]), float(result[1])
    if len(result) > 3:
        logger.debug("quad on [%s, %s]: %s", a, b, result[3])
    if check and err > abs_tol:
        raise QuadratureError(f"quadrature on [{a}, {b}] did not converge", err, abs_tol)
    return value, err
