"""Minimal pulse duration under a spectral mask.

Feasibility of the ensemble profile is monotone in T0 (a longer pulse compresses
the spectrum), so each problem is a bracketed bisection over T0 whose feasibility evaluations run
``check_fit`` on the ensemble ESD.
"""

import logging
import math

import numpy as np
from scipy import optimize

from covertlab.core.config import COVERT_BISECT_TOL
from covertlab.core.errors import InfeasibleMask, SlacknessTooLarge
from covertlab.core.workers import parallel_map
from covertlab.engines.pulses import RrcPulse
from covertlab.engines.scheme import log_codebook_size
from covertlab.engines.specmask import check_fit, ensemble_esd
from covertlab.schemas.covert_schemas import (
    BlocklengthResult,
    FrequencyGrid,
    OptimizerResult,
    SlacknessSpec,
    SpectralMask,
)

logger = logging.getLogger(__name__)

PROBE_GRID = FrequencyGrid(points=1024, cross_check=False)
MAX_GROWTH_STEPS = 2**20


def _feasible(mask: SpectralMask, beta: float, t0: float, slack: float = 0.0) -> bool:
    profile = ensemble_esd(1.0, 1, RrcPulse(t0=t0, beta=beta))
    return check_fit(profile, mask, PROBE_GRID, slack=slack).fits


def _screen(mask: SpectralMask) -> None:
    for i, c in enumerate(mask.constraints):
        if c.eta >= 1.0:
            raise InfeasibleMask(
                f"constraint {i}: in-band fraction {c.eta} is unreachable (time-limited pulses leak energy)",
                stage="optimize")


def _bisect(feasible, lo: float, hi: float, tol: float) -> float:
    """Shrink [lo, hi] (lo infeasible, hi feasible) to relative width tol; returns hi nudged up by tol."""
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi * (1.0 + tol)


def solve_p1_beta(mask: SpectralMask, beta: float, tol: float | None = None) -> float:
    """Smallest T0 for which the RRC ensemble ESD with roll-off beta fits the mask."""
    tol = COVERT_BISECT_TOL if tol is None else tol
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    _screen(mask)
    scale = mask.constraints[0].alpha * mask.w
    lo = 1e-3 / scale
    while _feasible(mask, beta, lo):
        lo /= 2.0
    hi = 1.0 / scale
    steps = 0
    while not _feasible(mask, beta, hi):
        lo = max(lo, hi)
        hi *= 2.0
        steps += 1
        if steps >= MAX_GROWTH_STEPS or not math.isfinite(hi):
            raise InfeasibleMask(f"no feasible pulse duration for beta={beta}", stage="optimize")
    return _bisect(lambda t0: _feasible(mask, beta, t0), lo, hi, tol)


def _c_of_beta(mask: SpectralMask, beta: float, tol: float) -> float:
    try:
        return mask.w * solve_p1_beta(mask, beta, tol)
    except InfeasibleMask:
        return math.inf


def solve_p1(mask: SpectralMask, beta_grid_size: int = 101, tol: float | None = None,
             refine_tol: float = 1e-4) -> OptimizerResult:
    """Minimize T0*(beta) over a uniform beta grid, then refine around the best grid point."""
    tol = COVERT_BISECT_TOL if tol is None else tol
    if beta_grid_size < 2:
        raise ValueError("beta grid needs at least two points")
    _screen(mask)
    betas = np.linspace(0.0, 1.0, beta_grid_size)
    curve = parallel_map(lambda b: _c_of_beta(mask, float(b), tol), betas)
    if all(math.isinf(c) for c in curve):
        raise InfeasibleMask("mask is infeasible for every roll-off", stage="optimize")
    k = int(np.argmin(curve))
    beta_star, c_star = float(betas[k]), float(curve[k])
    lo, hi = float(betas[max(k - 1, 0)]), float(betas[min(k + 1, beta_grid_size - 1)])
    if hi > lo:
        res = optimize.minimize_scalar(lambda b: _c_of_beta(mask, float(b), tol), bounds=(lo, hi),
                                       method="bounded", options={"xatol": refine_tol})
        if res.fun < c_star:
            beta_star, c_star = float(res.x), float(res.fun)
    t0_star = c_star / mask.w
    report = check_fit(ensemble_esd(1.0, 1, RrcPulse(t0=t0_star, beta=beta_star)), mask, PROBE_GRID)
    logger.info("solve_p1: beta*=%.5f c(beta*)=%.8f binding constraint %d", beta_star, c_star, report.binding)
    return OptimizerResult(t0_star=t0_star, beta_star=beta_star,
                           c_beta_curve=[(float(b), float(c)) for b, c in zip(betas, curve)],
                           binding=report.binding, tol=tol, w=mask.w)


def oracle_t0(mask: SpectralMask, beta: float, points_per_octave: int = 64, rel_tol: float = 1e-6) -> float:
    """Brute-force referee: scan a geometric T0 grid, then refine the first feasible cell."""
    _screen(mask)
    scale = mask.constraints[0].alpha * mask.w
    ratio = 2.0 ** (1.0 / points_per_octave)
    t0 = 1e-3 / scale
    previous = t0
    for _ in range(points_per_octave * 60):
        if _feasible(mask, beta, t0):
            break
        previous, t0 = t0, t0 * ratio
    else:
        raise InfeasibleMask(f"oracle found no feasible duration for beta={beta}", stage="optimize")
    lo, hi = previous, t0
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if _feasible(mask, beta, mid) else (mid, hi)
    return hi


def slackness(spec: SlacknessSpec, t0: float) -> float:
    """u(T, T0) = n / (MK)^(1/4) with n = T/T0 and MK = f(n) from the scheme formulas."""
    n = spec.t / t0
    if n < 3:
        return math.inf
    log_mk = log_codebook_size(n, spec.nw, spec.nb, spec.delta, spec.metric)
    return math.exp(math.log(n) - log_mk / 4.0)


def solve_p2(mask: SpectralMask, beta: float, slack: SlacknessSpec, tol: float | None = None) -> float:
    """Smallest T0 meeting the slackness-tightened constraints at total time T."""
    tol = COVERT_BISECT_TOL if tol is None else tol

    def feasible(t0: float) -> bool:
        u = slackness(slack, t0)
        return u < 1.0 and _feasible(mask, beta, t0, slack=u)

    p1 = solve_p1_beta(mask, beta, tol)
    # below the P1 boundary, hence infeasible for the tighter problem too
    lo = p1 * (1.0 - 2.0 * tol)
    ceiling = slack.t / 3.0
    step = 1e-3
    hi = p1
    while not feasible(hi):
        lo = hi
        hi = p1 * (1.0 + step)
        step *= 2.0
        if hi > ceiling:
            raise SlacknessTooLarge(f"no T0 in [{p1:.6g}, {ceiling:.6g}] meets the slackness-tightened mask "
                                    f"at T={slack.t}", stage="optimize")
    return _bisect(feasible, lo, hi, tol)


def blocklength(mask: SpectralMask, t: float, xi: float, result: OptimizerResult | None = None,
                nw: float = 1.0, nb: float = 1.0, delta: float = 0.5, metric: str = "tv") -> BlocklengthResult:
    """n = floor((1 - xi) W T / min c(beta)) and the mask-fit probability bound 1 - 2 n^2 exp(-sqrt(MK)/2)."""
    if t <= 0:
        raise ValueError("T must be positive")
    result = result or solve_p1(mask)
    c_min = result.c_min
    n = int(math.floor((1.0 - xi) * mask.w * t / c_min * (1.0 + 1e-12)))
    bound = 0.0
    if n >= 3:
        log_mk = log_codebook_size(n, nw, nb, delta, metric)
        sqrt_mk = math.exp(min(log_mk / 2.0, 700.0))
        log_fail = math.log(2.0 * n * n) - sqrt_mk / 2.0
        bound = -math.expm1(log_fail) if log_fail < 0 else 1.0 - math.exp(log_fail)
    return BlocklengthResult(n=n, fit_probability_bound=bound, c_min=c_min, w=mask.w, t=t, xi=xi)


def referee(result: OptimizerResult, mask: SpectralMask, rel_tol: float = 1e-5) -> OptimizerResult:
    """Re-solve beta* with the dense-grid referee; on disagreement the referee wins and is logged."""
    oracle = oracle_t0(mask, result.beta_star)
    gap = abs(oracle - result.t0_star) / oracle
    if gap <= rel_tol:
        return result
    logger.warning("optimizer and dense-grid referee disagree by %.3e at beta=%.5f; using referee value",
                   gap, result.beta_star)
    return result.model_copy(update={"t0_star": oracle})
