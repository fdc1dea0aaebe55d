"""Closed-form rate evaluators: achievable throughput, converse limits and their helper constants.

All quantities are in nats; ThroughputPair exposes bit conversions.
"""

import logging
import math

from pydantic import BaseModel, Field
from scipy import optimize

from covertlab.core.errors import QuantileDomain
from covertlab.core.special import q_func, q_inv
from covertlab.engines.scheme import log_sizes
from covertlab.schemas.covert_schemas import (
    ConverseBound,
    LowPowerConstants,
    Metric,
    OptimizerResult,
    SchemeParams,
    ThroughputPair,
)

logger = logging.getLogger(__name__)


def _radical(w: float, c_min: float, delta: float, metric: Metric) -> float:
    if metric == "tv":
        return math.sqrt(2.0 * w / c_min) * q_inv((1.0 - delta) / 2.0)
    return math.sqrt(delta * w / c_min)


def throughput(mask_opt: OptimizerResult, nw: float, nb: float, delta: float, metric: Metric = "tv") -> ThroughputPair:
    """Achievable (r, r_K) in nats per sqrt(second) at the optimizer's min c(beta)."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    radical = _radical(mask_opt.w, mask_opt.c_min, delta, metric)
    return ThroughputPair(r=nw / nb * radical, r_k=max(1.0 - nw / nb, 0.0) * radical, metric=metric)


def converse_bound(nw: float, nb: float, delta: float, metric: Metric = "tv") -> ConverseBound:
    """Upper limit on log M / sqrt(n) for the discrete-time channels."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if metric == "tv":
        limit = math.sqrt(2.0) * nw / nb * q_inv((1.0 - delta) / 2.0)
    else:
        limit = math.sqrt(delta) * nw / nb
    return ConverseBound(limit=limit, metric=metric)


def achievable_per_sqrt_n(n: float, nw: float, nb: float, delta: float, metric: Metric = "tv") -> float:
    """log M / sqrt(n) of the scheme at (possibly astronomically large) real n."""
    _, log_m, _ = log_sizes(n, nw, nb, delta, metric)
    return log_m / math.sqrt(n)


class KeyRateCheck(BaseModel):
    formula: float = Field(description="r_K per sqrt(n) from the closed-form throughput pair.")
    discrete: float = Field(description="log K / sqrt(n) from the scheme formulas at the given n.")
    residual: float


def key_rate_crosscheck(n: float, nw: float, nb: float, delta: float, metric: Metric = "tv") -> KeyRateCheck:
    """Compare the closed-form key rate with the discrete log K formula; the residual is reported, not fixed."""
    per_n = converse_bound(nw, nb, delta, metric).limit * nb / nw
    formula = max(1.0 - nw / nb, 0.0) * per_n
    _, _, log_k = log_sizes(n, nw, nb, delta, metric)
    discrete = log_k / math.sqrt(n)
    if abs(discrete - formula) > 0.05 * max(formula, 1e-12):
        logger.warning("key rate: closed form %.6g vs discrete %.6g at n=%.3g", formula, discrete, n)
    return KeyRateCheck(formula=formula, discrete=discrete, residual=discrete - formula)


def power_detector_bound(n: int, p_min: float, nw: float, nu1: float = 1.0, nu2: float = 1.0) -> float:
    """Radiometer lower bound on V(Q_hat, Q0^n) for a code of minimum power p_min."""
    return (1.0 - 2.0 * q_func(p_min / (math.sqrt(2.0 * n) * nw))
            - p_min**2 / (math.sqrt(math.pi) * nw**2 * n**1.5) - (nu1 + nu2) / math.sqrt(n))


def _a_const(n: float, nw: float, delta: float, gamma: float, nu: float) -> tuple[float, float]:
    argument = (1.0 - delta) / 2.0 - 2.0 * nu * nu / (math.sqrt(math.pi * n) * nw * nw) - gamma
    if not 0.0 < argument < 0.5:
        raise QuantileDomain(f"low-power constant needs a quantile argument in (0, 1/2), got {argument:.6g}",
                             stage="bounds")
    return math.sqrt(2.0) * nw * q_inv(argument), argument


def low_power_constants(n: float, nw: float, delta: float, gamma: float, nu: float | None = None,
                        nu1: float = 1.0, nu2: float = 1.0) -> LowPowerConstants:
    """Power constant A of the low-power sub-code and its size fraction gamma.

    Without an explicit ``nu`` the smallest nu with
    4 nu^2 - A(nu)^2 - (nu1 + nu2) sqrt(pi) N^2 >= 0 is found numerically.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if nu is None:
        nu = _solve_nu(n, nw, delta, gamma, nu1 + nu2)
    a_const, argument = _a_const(n, nw, delta, gamma, nu)
    return LowPowerConstants(a_const=a_const, nu=nu, quantile_argument=argument, fraction=gamma,
                            power_bound=a_const * math.sqrt(n))


def _solve_nu(n: float, nw: float, delta: float, gamma: float, nu_sum: float) -> float:
    room = (1.0 - delta) / 2.0 - gamma
    if room <= 0.0:
        raise QuantileDomain(f"(1 - delta)/2 - gamma = {room:.6g} leaves no room for nu", stage="bounds")
    nu_max = math.sqrt(room * math.sqrt(math.pi * n) * nw * nw / 2.0)

    def slack(nu: float) -> float:
        return 4.0 * nu * nu - _a_const(n, nw, delta, gamma, nu)[0] ** 2 - nu_sum * math.sqrt(math.pi) * nw * nw

    upper = nu_max * (1.0 - 1e-9)
    best = optimize.minimize_scalar(lambda v: -slack(v), bounds=(0.0, upper), method="bounded",
                                    options={"xatol": 1e-10 * nu_max})
    if -best.fun < 0.0:
        raise QuantileDomain(f"no nu satisfies the side condition at n={n:.3g}", stage="bounds")
    return float(optimize.brentq(slack, 0.0, float(best.x), xtol=1e-12 * nu_max))


class ReliabilityBound(BaseModel):
    missed: float = Field(description="P(log W/P0 <= gamma) for the transmitted word.")
    confusion: float = Field(description="M e^-gamma times the exact cosh^n factor.")
    false_activity: float = Field(description="M e^-gamma.")

    @property
    def total(self) -> float:
        return min(1.0, self.missed + self.confusion + self.false_activity)


def reliability_bound(params: SchemeParams) -> ReliabilityBound:
    """Ensemble average-error bound of the threshold decoder.

    The per-word log-likelihood ratio is exactly Normal(E/N_b, 2E/N_b) with E = a^2 n,
    and the confusion term keeps cosh(2a^2/N_b)^n instead of its Taylor bound.
    """
    energy = params.energy / params.nb
    missed = q_func((energy - params.gamma) / math.sqrt(2.0 * energy))
    log_base = params.log_m - params.gamma
    log_cosh_n = params.n * math.log(math.cosh(2.0 * params.a_n**2 / params.nb))
    return ReliabilityBound(missed=missed, confusion=math.exp(min(log_base + log_cosh_n, 700.0)),
                            false_activity=math.exp(min(log_base, 700.0)))
