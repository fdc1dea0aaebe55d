"""Warden-side output distributions, detectors and divergences.

Single-letter outputs are Q0 = N(0, N/2) under silence and Q_{+-a} = N(+-a, N/2)
under a BPSK symbol; the ensemble output is Q_tilde = (Q_a + Q_{-a}) / 2. The
single-letter log-likelihood ratio is

    l(z) = log Q_tilde(z)/Q0(z) = -a^2/N + log cosh(2 a z / N)

and every product or mixture statistic is assembled from it in log space.
"""

import logging
import math
from collections.abc import Callable
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field
from scipy import optimize, special, stats

from covertlab.core import streams
from covertlab.core.config import COVERT_MC_BUDGET
from covertlab.core.errors import BudgetExceeded
from covertlab.core.special import log_cosh, q_func
from covertlab.core.workers import parallel_map
from covertlab.engines.pulses import quad
from covertlab.engines.scheme import Codebook
from covertlab.schemas.covert_schemas import (
    BerryEsseenMoments,
    CodebookTv,
    DetectionResult,
    ExponentReport,
    KlReport,
    McEstimate,
    TvReport,
)

logger = logging.getLogger(__name__)

Detector = Literal["lrt-product", "lrt-codebook", "power"]

WARDEN_DOMAIN = "warden"
SUBSAMPLE_SIZE = 2**12
_CHUNK = 1024
# standard-normal range used by the expectation quadratures; the mass outside is below 1e-40
_SPAN = 14.0


class OutputDists(BaseModel):
    model_config = ConfigDict(frozen=True)

    nw: float = Field(gt=0, description="Noise parameter N (per-symbol variance N/2).")
    a: float = Field(ge=0, description="BPSK amplitude.")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.nw / 2.0)

    def log_q0(self, z: ArrayLike) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return -np.square(z) / self.nw - 0.5 * math.log(math.pi * self.nw)

    def log_qa(self, z: ArrayLike, sign: int = 1) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return -np.square(z - sign * self.a) / self.nw - 0.5 * math.log(math.pi * self.nw)

    def log_qtilde(self, z: ArrayLike) -> np.ndarray:
        return np.logaddexp(self.log_qa(z, 1), self.log_qa(z, -1)) - math.log(2.0)

    def llr(self, z: ArrayLike) -> np.ndarray:
        """Single-letter log Q_tilde/Q0."""
        z = np.asarray(z, dtype=float)
        if self.a == 0:
            return np.zeros_like(z)
        return -self.a * self.a / self.nw + log_cosh(2.0 * self.a * z / self.nw)

    def info_density(self, z: ArrayLike) -> np.ndarray:
        """log Q_a(z)/Q_tilde(z)."""
        u = 2.0 * self.a * np.asarray(z, dtype=float) / self.nw
        return u - log_cosh(u)

    def expect(self, g: Callable[[float], float], sign: int = 0, abs_tol: float = 1e-12) -> float:
        """E[g(Z)] for Z ~ Q0 (sign 0) or Q_{sign*a}, by quadrature in standard-normal units."""
        loc, sigma = sign * self.a, self.sigma
        norm = 1.0 / math.sqrt(2.0 * math.pi)
        return quad(lambda u: g(loc + sigma * u) * norm * math.exp(-0.5 * u * u), (-_SPAN, _SPAN), abs_tol,
                    piece_width=2.0)

    def mass(self) -> dict[str, float]:
        """Total mass of Q0, Q_a and Q_tilde by quadrature over the real line."""
        tol = 1e-12
        return {
            "q0": quad(lambda z: float(np.exp(self.log_q0(z))), (-math.inf, math.inf), tol),
            "qa": quad(lambda z: float(np.exp(self.log_qa(z))), (-math.inf, math.inf), tol),
            "qtilde": quad(lambda z: float(np.exp(self.log_qtilde(z))), (-math.inf, math.inf), tol),
        }


def llr_product(z: ArrayLike, dists: OutputDists) -> float | np.ndarray:
    """sum_i l(z_i) along the last axis."""
    z = np.asarray(z, dtype=float)
    if dists.a == 0:
        return 0.0 if z.ndim <= 1 else np.zeros(z.shape[:-1])
    out = dists.llr(z).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def tv_closed_form(n: int, a: float, nw: float) -> float:
    """Leading term 1 - 2 Q((a^2/N) sqrt(n/2)) of V(Q_tilde^n, Q0^n)."""
    if a == 0:
        return 0.0
    return 1.0 - 2.0 * q_func(a * a / nw * math.sqrt(n / 2.0))


def _estimate(hits: np.ndarray, seed: int) -> McEstimate:
    p = float(np.mean(hits))
    return McEstimate(value=p, stderr=math.sqrt(p * (1.0 - p) / hits.size), trials=int(hits.size), seed=seed)


def _difference(p: McEstimate, q: McEstimate) -> McEstimate:
    return McEstimate(value=p.value - q.value, stderr=math.hypot(p.stderr, q.stderr), trials=p.trials, seed=p.seed)


def _bank_statistics(stat: Callable[[np.ndarray], np.ndarray], draw: Callable[[int], np.ndarray],
                     trials: int) -> np.ndarray:
    """Evaluate ``stat`` on stacked draws, chunk by chunk; draw(t) depends only on t."""
    chunks = [range(s, min(s + _CHUNK, trials)) for s in range(0, trials, _CHUNK)]
    blocks = parallel_map(lambda chunk: np.asarray(stat(np.stack([draw(t) for t in chunk]))), chunks)
    return np.concatenate(blocks) if blocks else np.zeros(0)


def _silence_draw(seed: int, n: int, dists: OutputDists, bank: int = 0) -> Callable[[int], np.ndarray]:
    return lambda t: streams.stream(seed, WARDEN_DOMAIN, bank, t).normal(0.0, dists.sigma, n)


def _ensemble_draw(seed: int, n: int, dists: OutputDists, bank: int = 1) -> Callable[[int], np.ndarray]:
    def draw(t: int) -> np.ndarray:
        g = streams.stream(seed, WARDEN_DOMAIN, bank, t)
        signs = g.integers(0, 2, n) * 2 - 1
        return dists.a * signs + g.normal(0.0, dists.sigma, n)
    return draw


def _codebook_draw(seed: int, codewords: np.ndarray, dists: OutputDists, bank: int = 2) -> Callable[[int], np.ndarray]:
    def draw(t: int) -> np.ndarray:
        g = streams.stream(seed, WARDEN_DOMAIN, bank, t)
        row = int(g.integers(0, codewords.shape[0]))
        return codewords[row] + g.normal(0.0, dists.sigma, codewords.shape[1])
    return draw


def tv_product(n: int, a: float, nw: float, trials: int = 0, seed: int = 0) -> TvReport:
    """Closed-form leading term plus, when trials > 0, the two-bank Monte Carlo estimate
    P_{Q_tilde^n}(LLR >= 0) - P_{Q0^n}(LLR >= 0)."""
    if n < 2:
        raise ValueError("n must be at least 2")
    closed = tv_closed_form(n, a, nw)
    if trials <= 0:
        return TvReport(closed_form=closed)
    if a == 0:
        return TvReport(closed_form=0.0, monte_carlo=McEstimate(value=0.0, stderr=0.0, trials=trials, seed=seed))
    dists = OutputDists(nw=nw, a=a)
    stat = lambda z: llr_product(z, dists)
    h0 = _bank_statistics(stat, _silence_draw(seed, n, dists), trials) >= 0
    h1 = _bank_statistics(stat, _ensemble_draw(seed, n, dists), trials) >= 0
    return TvReport(closed_form=closed, monte_carlo=_difference(_estimate(h1, seed), _estimate(h0, seed)))


def _chi2_abs_third() -> float:
    """E|U^2 - 1|^3 for U standard normal."""
    return float(stats.norm.expect(lambda u: abs(u * u - 1.0) ** 3))


def berry_esseen_moments(a: float, nw: float) -> BerryEsseenMoments:
    """Mean, variance and absolute third central moment of l(Z) under Q0 and Q_tilde."""
    snr = a * a / nw
    leading = {
        "mu0": -snr**2, "var0": 2.0 * snr**2, "mu1": snr**2, "var1": 2.0 * snr**2,
        "s0": snr**3 * _chi2_abs_third(), "s1": snr**3 * _chi2_abs_third(),
    }
    if a == 0:
        return BerryEsseenMoments(mu0=0.0, var0=0.0, s0=0.0, mu1=0.0, var1=0.0, s1=0.0, leading=leading)
    dists = OutputDists(nw=nw, a=a)
    ell = lambda z: float(dists.llr(z))
    fourth, sixth = 1e-7 * snr**2, 1e-6 * snr**3

    def moments(sign: int) -> tuple[float, float, float]:
        mu = dists.expect(ell, sign, fourth)
        var = dists.expect(lambda z: (ell(z) - mu) ** 2, sign, fourth)
        third = dists.expect(lambda z: abs(ell(z) - mu) ** 3, sign, sixth)
        return mu, var, third

    mu0, var0, s0 = moments(0)
    # l is even, so Q_tilde and Q_a give the same moments
    mu1, var1, s1 = moments(1)
    return BerryEsseenMoments(mu0=mu0, var0=var0, s0=s0, mu1=mu1, var1=var1, s1=s1, leading=leading)


def kl_single_letter(a: float, nw: float) -> KlReport:
    """D(Q_tilde || Q0) by quadrature, the sixth-order Taylor bound and the leading a^4/N^2."""
    x = a * a / nw
    taylor = x**2 - 4.0 / 3.0 * x**3 + (16.0 - 4.0 / 3.0) * x**4 + 32.0 / 3.0 * x**5 + 64.0 / 45.0 * x**6
    if a == 0:
        return KlReport(quadrature=0.0, taylor_bound=0.0, leading=0.0)
    dists = OutputDists(nw=nw, a=a)
    value = dists.expect(lambda z: float(dists.llr(z)), 1, 1e-8 * x * x)
    return KlReport(quadrature=value, taylor_bound=taylor, leading=x * x)


def exponent_value(rho: float, r: float, a: float, nw: float) -> float:
    """rho R - log E_{Q_a}[(Q_a/Q_tilde)^rho], defined for |rho| <= 1."""
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [-1, 1], got {rho}")
    if a == 0 or rho == 0:
        return rho * r
    dists = OutputDists(nw=nw, a=a)
    return rho * r - math.log(dists.expect(lambda z: math.exp(rho * float(dists.info_density(z))), 1, 1e-12))


def kl_exponent_f(rho: float, r: float, a: float, nw: float) -> ExponentReport:
    """f(rho) = rho R - log E_{Q_a}[(Q_a/Q_tilde)^rho] with its value, slope and curvature at 0."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    if a == 0:
        return ExponentReport(f=rho * r, f0=0.0, fprime0=r, fsecond0=0.0, mutual_information=0.0)
    dists = OutputDists(nw=nw, a=a)
    h = lambda z: float(dists.info_density(z))
    tol = 1e-12
    info = dists.expect(h, 1, tol)
    second = dists.expect(lambda z: h(z) ** 2, 1, tol)
    return ExponentReport(f=exponent_value(rho, r, a, nw), f0=0.0, fprime0=r - info, fsecond0=info * info - second,
                          mutual_information=info)


def nu_crossover(a: float, nw: float) -> float:
    """Positive root of Q_tilde(z) = Q0(z): (N/2a) arccosh(exp(a^2/N))."""
    if a <= 0:
        raise ValueError("crossover needs a > 0")
    eps = math.expm1(a * a / nw)
    return nw / (2.0 * a) * math.log1p(eps + math.sqrt(eps * (2.0 + eps)))


def power_statistic(z: ArrayLike) -> np.ndarray | float:
    z = np.asarray(z, dtype=float)
    out = np.square(z).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def power_threshold(n: int, nw: float, p_min: float) -> float:
    return n * nw / 2.0 + p_min / 2.0


def power_detector(z: ArrayLike, nw: float, p_min: float) -> bool:
    """Radiometer decision: True when sum z_i^2 >= n N/2 + P_min/2."""
    z = np.asarray(z, dtype=float)
    return bool(power_statistic(z) >= power_threshold(z.size, nw, p_min))


def _mixture_log_ratio(codewords: np.ndarray, nw: float) -> Callable[[np.ndarray], np.ndarray]:
    """z -> log(Q_hat(z) / Q0^n(z)) for the uniform mixture over ``codewords``."""
    energy = np.square(codewords).sum(axis=1)
    log_size = math.log(codewords.shape[0])

    def stat(z: np.ndarray) -> np.ndarray:
        return special.logsumexp((2.0 * z @ codewords.T - energy) / nw, axis=1) - log_size
    return stat


def _mixture_rows(cb: Codebook, seed: int, subsample: int | None, budget: int) -> tuple[np.ndarray, int | None]:
    codewords = cb.codewords()
    if cb.size <= budget:
        return codewords, None
    if subsample is None:
        raise BudgetExceeded(f"MK = {cb.size} exceeds the per-sample mixture budget {budget}; "
                             "pass a subsample size", stage="detect")
    rows = streams.stream(seed, "subsample").choice(cb.size, size=min(subsample, cb.size), replace=False)
    logger.warning("mixture density evaluated on a uniform subsample of %d of %d codewords", rows.size, cb.size)
    return codewords[np.sort(rows)], int(rows.size)


def tv_codebook(cb: Codebook, nw: float, trials: int, seed: int, subsample: int | None = None,
                budget: int | None = None) -> CodebookTv:
    """Plug-in estimates of V(Q_hat, Q0^n) and V(Q_hat, Q_tilde^n)."""
    budget = COVERT_MC_BUDGET if budget is None else budget
    rows, used = _mixture_rows(cb, seed, subsample, budget)
    dists = OutputDists(nw=nw, a=cb.a_n)
    log_hat = _mixture_log_ratio(rows, nw)
    vs_tilde = lambda z: log_hat(z) - llr_product(z, dists)

    code_draw = _codebook_draw(seed, cb.codewords(), dists)
    silence = _bank_statistics(log_hat, _silence_draw(seed, cb.n, dists), trials)
    from_code = _bank_statistics(lambda z: np.stack([log_hat(z), vs_tilde(z)], axis=1), code_draw, trials)
    ensemble = _bank_statistics(vs_tilde, _ensemble_draw(seed, cb.n, dists), trials)

    vs_silence = _difference(_estimate(from_code[:, 0] >= 0, seed), _estimate(silence >= 0, seed))
    vs_ensemble = _difference(_estimate(from_code[:, 1] >= 0, seed), _estimate(ensemble >= 0, seed))
    return CodebookTv(vs_silence=vs_silence, vs_ensemble=vs_ensemble, subsample=used)


class KlCodebook(BaseModel):
    vs_silence: McEstimate = Field(description="D(Q_hat || Q0^n).")
    vs_ensemble: McEstimate = Field(description="D(Q_hat || Q_tilde^n).")
    ensemble: float = Field(description="n D(Q_tilde || Q0).")
    cross_term: float = Field(description="int (Q_hat - Q_tilde^n) log(Q_tilde^n / Q0^n).")


def _mean(values: np.ndarray, seed: int) -> McEstimate:
    return McEstimate(value=float(values.mean()), stderr=float(values.std(ddof=1) / math.sqrt(values.size)),
                      trials=int(values.size), seed=seed)


def kl_codebook(cb: Codebook, nw: float, trials: int, seed: int, subsample: int | None = None,
                budget: int | None = None) -> KlCodebook:
    """Monte Carlo KL of the code output against silence and the ensemble.

    D(Q_hat||Q0^n) = D(Q_hat||Q_tilde^n) + n D(Q_tilde||Q0) + cross term.
    """
    budget = COVERT_MC_BUDGET if budget is None else budget
    if trials < 2:
        raise ValueError("KL estimation needs at least two trials")
    rows, _ = _mixture_rows(cb, seed, subsample, budget)
    dists = OutputDists(nw=nw, a=cb.a_n)
    log_hat = _mixture_log_ratio(rows, nw)
    samples = _bank_statistics(lambda z: np.stack([log_hat(z), log_hat(z) - llr_product(z, dists)], axis=1),
                               _codebook_draw(seed, cb.codewords(), dists), trials)
    return KlCodebook(vs_silence=_mean(samples[:, 0], seed), vs_ensemble=_mean(samples[:, 1], seed),
                      ensemble=cb.n * kl_single_letter(cb.a_n, nw).quadrature,
                      cross_term=cross_term_exact(cb, nw))


def cross_term_exact(cb: Codebook, nw: float) -> float:
    """Exact KL cross term of a BPSK code.

    Each coordinate contributes E_{Q_{x_i}}[l] - E_{Q_tilde}[l]; l is even, so both
    signs give the same expectation and the term vanishes for every code.
    """
    if cb.a_n == 0:
        return 0.0
    dists = OutputDists(nw=nw, a=cb.a_n)
    ell = lambda z: float(dists.llr(z))
    plus = dists.expect(ell, 1)
    minus = dists.expect(ell, -1)
    share = cb.signs.astype(float).mean(axis=0)
    per_coordinate = share * plus + (1.0 - share) * minus - 0.5 * (plus + minus)
    return float(per_coordinate.sum())


class CrossTermRegions(BaseModel):
    nu: float
    inner: McEstimate = Field(description="Code-minus-ensemble mean of sum l(z_i) over |z_i| < nu.")
    outer: McEstimate = Field(description="Same over |z_i| >= nu.")


def cross_term_regions(cb: Codebook, nw: float, trials: int, seed: int) -> CrossTermRegions:
    """Monte Carlo split of the cross term at the Q_tilde/Q0 crossover +-nu."""
    dists = OutputDists(nw=nw, a=cb.a_n)
    nu = nu_crossover(cb.a_n, nw)

    def split(z: np.ndarray) -> np.ndarray:
        ell = dists.llr(z)
        inside = np.abs(z) < nu
        return np.stack([np.where(inside, ell, 0.0).sum(axis=1), np.where(inside, 0.0, ell).sum(axis=1)], axis=1)

    code = _bank_statistics(split, _codebook_draw(seed, cb.codewords(), dists), trials)
    ens = _bank_statistics(split, _ensemble_draw(seed, cb.n, dists), trials)

    def diff(k: int) -> McEstimate:
        value = float(code[:, k].mean() - ens[:, k].mean())
        err = math.sqrt(code[:, k].var(ddof=1) / trials + ens[:, k].var(ddof=1) / trials)
        return McEstimate(value=value, stderr=err, trials=trials, seed=seed)

    return CrossTermRegions(nu=nu, inner=diff(0), outer=diff(1))


def soft_covering_bound(n: int, a: float, nw: float, log_mk: float) -> float:
    """Resolvability bound min_theta P[i(X;Z) > theta] + sqrt(exp(theta)/MK)/2.

    The information density is a sum of n iid terms; its tail is taken from the
    Gaussian with the exact per-letter mean and variance.
    """
    if a == 0:
        return 0.0
    dists = OutputDists(nw=nw, a=a)
    h = lambda z: float(dists.info_density(z))
    mean = dists.expect(h, 1)
    var = dists.expect(lambda z: (h(z) - mean) ** 2, 1)
    loc, scale = n * mean, math.sqrt(n * var)

    def bound(theta: float) -> float:
        return q_func((theta - loc) / scale) + 0.5 * math.exp(0.5 * (theta - log_mk))

    res = optimize.minimize_scalar(bound, bounds=(loc - 10.0 * scale, max(log_mk, loc + 10.0 * scale)),
                                   method="bounded")
    return float(min(1.0, res.fun))


def roc_sweep(stat_h0: np.ndarray, stat_h1: np.ndarray, thresholds: ArrayLike | None = None,
              points: int = 101) -> list[tuple[float, float, float]]:
    """(threshold, P_FA, P_MD) rows for the rule 'declare H1 when statistic >= threshold'."""
    stat_h0, stat_h1 = np.sort(np.asarray(stat_h0)), np.sort(np.asarray(stat_h1))
    if thresholds is None:
        both = np.concatenate([stat_h0, stat_h1])
        thresholds = np.quantile(both, np.linspace(0.0, 1.0, points))
    rows = []
    for tau in np.asarray(thresholds, dtype=float):
        p_fa = 1.0 - np.searchsorted(stat_h0, tau, side="left") / stat_h0.size
        p_md = np.searchsorted(stat_h1, tau, side="left") / stat_h1.size
        rows.append((float(tau), float(p_fa), float(p_md)))
    return rows


def detector_statistics(detector: Detector, n: int, a: float, nw: float, trials: int, seed: int,
                        cb: Codebook | None = None, subsample: int | None = None,
                        budget: int | None = None) -> tuple[np.ndarray, np.ndarray, float]:
    """Statistic samples under H0 (silence) and H1 (code output, or the ensemble when cb is None)."""
    budget = COVERT_MC_BUDGET if budget is None else budget
    dists = OutputDists(nw=nw, a=a)
    if detector == "lrt-product":
        stat, threshold = (lambda z: np.asarray(llr_product(z, dists))), 0.0
    elif detector == "power":
        stat, threshold = power_statistic, power_threshold(n, nw, n * a * a)
    elif detector == "lrt-codebook":
        if cb is None:
            raise ValueError("lrt-codebook needs a codebook")
        rows, _ = _mixture_rows(cb, seed, subsample, budget)
        stat, threshold = _mixture_log_ratio(rows, nw), 0.0
    else:
        raise ValueError(f"unknown detector {detector!r}")
    h1_draw = _codebook_draw(seed, cb.codewords(), dists) if cb is not None else _ensemble_draw(seed, n, dists)
    h0 = _bank_statistics(stat, _silence_draw(seed, n, dists), trials)
    h1 = _bank_statistics(stat, h1_draw, trials)
    return h0, h1, threshold


def detection_result(detector: Detector, h0: np.ndarray, h1: np.ndarray, threshold: float, seed: int) -> DetectionResult:
    trials = int(h0.size)
    p_fa = _estimate(h0 >= threshold, seed)
    p_md = _estimate(h1 < threshold, seed)
    return DetectionResult(detector=detector, p_fa=p_fa.value, p_md=p_md.value, sum=p_fa.value + p_md.value,
                           stderr=math.hypot(p_fa.stderr, p_md.stderr), trials=trials, threshold=threshold)


def run_detector(detector: Detector, n: int, a: float, nw: float, trials: int, seed: int,
                 cb: Codebook | None = None, subsample: int | None = None) -> DetectionResult:
    h0, h1, threshold = detector_statistics(detector, n, a, nw, trials, seed, cb, subsample)
    return detection_result(detector, h0, h1, threshold, seed)
