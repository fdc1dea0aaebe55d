"""Named property checks run by ``covertlab verify``.

Each check is a small, seeded, desk-scale instance of an identity or bound the
engines must satisfy. Checks never raise for a failed property; they report it.
"""

import logging
import math
import time
from collections.abc import Callable

import numpy as np
from pydantic import BaseModel

from covertlab.core.errors import CovertLabError
from covertlab.engines import analysis, detect, maskopt, scheme, specmask
from covertlab.engines.pulses import RrcPulse, ShiftedBasis, basis_gram, fourier_transform_numeric, quad
from covertlab.schemas.covert_schemas import SpectralMask

logger = logging.getLogger(__name__)

REFERENCE_MASK = SpectralMask.from_dict({
    "W": 1.0,
    "constraints": [{"U_dB": 20.0, "alpha": 1.0, "eta": 0.9}, {"U_dB": 40.0, "alpha": 2.0, "eta": 0.99}],
})


class PropertyCheck(BaseModel):
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""
    seconds: float = 0.0


def _check(name: str, value: float, limit: float, detail: str = "") -> PropertyCheck:
    return PropertyCheck(name=name, passed=bool(value <= limit), value=value, limit=limit, detail=detail)


def unit_energy() -> PropertyCheck:
    worst = 0.0
    for t0 in (0.5, 1.0, 3.0):
        for beta in (0.0, 0.25, 0.5, 1.0):
            p = RrcPulse(t0=t0, beta=beta)
            energy = quad(lambda t: float(p.time(t)) ** 2, (-t0 / 2, t0 / 2), 1e-12, breakpoints=p.time_breakpoints())
            worst = max(worst, abs(energy - 1.0))
    return _check("unit_energy", worst, 1e-8, "max |int phi^2 - 1| over 12 (T0, beta) pairs")


def spectrum_vs_transform() -> PropertyCheck:
    worst = 0.0
    for beta in (0.0, 0.5, 1.0):
        p = RrcPulse(t0=1.0, beta=beta)
        for f in np.linspace(0.0, 4.0, 17):
            worst = max(worst, abs(float(p.freq(f)) - fourier_transform_numeric(p, float(f))))
    return _check("spectrum_vs_transform", worst, 1e-6, "closed-form spectrum vs numeric cosine transform")


def gram_identity() -> PropertyCheck:
    gram = basis_gram(ShiftedBasis(pulse=RrcPulse(t0=1.0, beta=0.5), n=8))
    return _check("gram_identity", float(np.max(np.abs(gram - np.eye(8)))), 1e-8, "shifted basis, n=8")


def esd_exactness() -> PropertyCheck:
    params = scheme.derive_params(6, 1.0, 1.0, 0.5)
    pulse = RrcPulse(t0=1.0, beta=0.5)
    f = np.linspace(0.0, 3.0, 64)
    exact = specmask.codebook_esd(scheme.enumerate_codebook(params), pulse)(f)
    ensemble = specmask.ensemble_esd(params.a_n, 6, pulse)(f)
    return _check("esd_exactness", float(np.max(np.abs(exact - ensemble))), 1e-12,
                  "ensemble ESD vs full enumeration at n=6")


def bandwidth_scaling() -> PropertyCheck:
    values = [w * maskopt.solve_p1_beta(REFERENCE_MASK.with_bandwidth(w), 0.5) for w in (0.5, 1.0, 2.0, 8.0)]
    spread = (max(values) - min(values)) / min(values)
    return _check("bandwidth_scaling", spread, 1e-5, "relative spread of W T0*(W, beta=0.5)")


def tv_below_delta() -> PropertyCheck:
    worst = -math.inf
    for delta in (0.2, 0.5, 0.9):
        for n in (256, 4096, 65536):
            a = scheme.amplitude(n, 1.0, delta, "tv")
            worst = max(worst, detect.tv_closed_form(n, a, 1.0) - delta)
    return _check("tv_below_delta", worst, 0.0, "closed-form TV minus delta at the scheme amplitude")


def kl_exponent_origin() -> PropertyCheck:
    report = detect.kl_exponent_f(0.0, 0.01, 0.1, 1.0)
    h = 1e-4
    slope = (detect.exponent_value(h, 0.01, 0.1, 1.0) - detect.exponent_value(-h, 0.01, 0.1, 1.0)) / (2.0 * h)
    gap = max(abs(report.f), abs(slope - report.fprime0))
    return _check("kl_exponent_origin", gap, 1e-6, "f(0) = 0 and central-difference slope at 0")


def crossover_root() -> PropertyCheck:
    dists = detect.OutputDists(nw=1.0, a=0.3)
    nu = detect.nu_crossover(0.3, 1.0)
    lo, hi = float(dists.llr(nu * (1 - 1e-9))), float(dists.llr(nu * (1 + 1e-9)))
    passed = lo < 0.0 < hi and nu <= 0.15 + 1.0 / 0.6
    return PropertyCheck(name="crossover_root", passed=passed, value=nu, limit=0.15 + 1.0 / 0.6,
                         detail="llr changes sign at nu and nu <= a/2 + N/(2a)")


def bounds_coherence() -> PropertyCheck:
    converse = analysis.converse_bound(1.0, 1.0, 0.5).limit
    ratio = max(analysis.achievable_per_sqrt_n(n, 1.0, 1.0, 0.5) / converse for n in (1e3, 1e6, 1e9))
    return _check("bounds_coherence", ratio, 1.0, "achievable log M / sqrt(n) over the converse limit")


def rearrangement_bound() -> PropertyCheck:
    params = scheme.simulation_params(scheme.derive_params(32, 1.0, 2.0, 0.5), m=8, k=16)
    cb = scheme.generate_codebook(params, seed=7)
    errors = [0.01] * 12 + [0.6] * 4
    rc = scheme.rearrange(cb, errors, float(np.mean(errors)))
    worst = max(rc.predicted_errors(errors))
    if not rc.is_bijection():
        return PropertyCheck(name="rearrangement_bound", passed=False, value=worst, limit=rc.error_bound,
                             detail="rearrangement lost or duplicated codewords")
    return _check("rearrangement_bound", worst, rc.error_bound, "max predicted sub-code error vs sqrt(eps) + eps_hat")


CHECKS: dict[str, Callable[[], PropertyCheck]] = {
    "unit_energy": unit_energy,
    "spectrum_vs_transform": spectrum_vs_transform,
    "gram_identity": gram_identity,
    "esd_exactness": esd_exactness,
    "bandwidth_scaling": bandwidth_scaling,
    "tv_below_delta": tv_below_delta,
    "kl_exponent_origin": kl_exponent_origin,
    "crossover_root": crossover_root,
    "bounds_coherence": bounds_coherence,
    "rearrangement_bound": rearrangement_bound,
}


def run_checks(names: list[str] | None = None) -> list[PropertyCheck]:
    selected = names or list(CHECKS)
    unknown = [n for n in selected if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks: {', '.join(unknown)}")
    results = []
    for name in selected:
        start = time.perf_counter()
        try:
            result = CHECKS[name]()
        except CovertLabError as e:
            result = PropertyCheck(name=name, passed=False, value=math.nan, limit=math.nan,
                                   detail=f"{type(e).__name__}: {e.message}")
        result.seconds = time.perf_counter() - start
        logger.info("verify %-24s %s (%.2fs)", name, "ok" if result.passed else "FAILED", result.seconds)
        results.append(result)
    return results
