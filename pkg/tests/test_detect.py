import math

import numpy as np
import pytest

from covertlab.core.errors import BudgetExceeded
from covertlab.engines import detect, scheme
from covertlab.engines.detect import OutputDists
from covertlab.verification import run_checks


def _codebook(n=64, m=64, k=64, seed=3, delta=0.5):
    params = scheme.simulation_params(scheme.derive_params(n, 1.0, 1.0, delta), m=m, k=k)
    return scheme.generate_codebook(params, seed=seed)


def test_llr_matches_log_densities():
    dists = OutputDists(nw=1.3, a=0.4)
    z = np.linspace(-6.0, 6.0, 41)
    assert np.allclose(dists.llr(z), dists.log_qtilde(z) - dists.log_q0(z), atol=1e-12)
    assert np.allclose(dists.llr(z), dists.llr(-z), atol=1e-14), "the LLR is even in z"
    for name, mass in dists.mass().items():
        assert mass == pytest.approx(1.0, abs=1e-9), f"{name} does not integrate to one"


def test_llr_product_shapes():
    dists = OutputDists(nw=1.0, a=0.3)
    z = np.ones((3, 5))
    out = detect.llr_product(z, dists)
    assert out.shape == (3,)
    assert detect.llr_product(z[0], dists) == pytest.approx(float(out[0]))
    assert detect.llr_product(z, OutputDists(nw=1.0, a=0.0)).tolist() == [0.0, 0.0, 0.0]


@pytest.mark.parametrize("delta", [0.1, 0.5, 0.9])
def test_scheme_amplitude_is_covert_to_leading_order(delta):
    for n in (10**3, 10**5, 10**7):
        a = scheme.amplitude(n, 1.0, delta, "tv")
        assert detect.tv_closed_form(n, a, 1.0) < delta, f"closed-form TV exceeds {delta} at n={n}"


def test_tv_monte_carlo_agrees_with_closed_form():
    n, nw = 400, 1.0
    a = math.sqrt(0.4 * nw / math.sqrt(n / 2.0))
    report = detect.tv_product(n, a, nw, trials=4000, seed=7)
    mc = report.monte_carlo
    assert report.closed_form == pytest.approx(1.0 - 2.0 * 0.3445783, abs=1e-6)
    assert abs(mc.value - report.closed_form) < 0.05 + 4 * mc.stderr, f"{mc} vs {report.closed_form}"
    assert detect.tv_product(n, a, nw).monte_carlo is None
    with pytest.raises(ValueError, match="at least 2"):
        detect.tv_product(1, a, nw)


def test_berry_esseen_moments_approach_leading_terms():
    moments = detect.berry_esseen_moments(0.1, 1.0)
    for key in ("mu0", "var0", "mu1", "var1"):
        assert getattr(moments, key) == pytest.approx(moments.leading[key], rel=0.05), f"{key} off"
    assert moments.s0 == pytest.approx(moments.leading["s0"], rel=0.1)
    assert moments.mu0 < 0 < moments.mu1


def test_single_letter_kl():
    report = detect.kl_single_letter(0.3, 1.0)
    x = 0.09
    assert report.leading == pytest.approx(x * x)
    assert report.quadrature <= report.taylor_bound * (1 + 1e-9)
    assert report.quadrature == pytest.approx(x * x - 4.0 / 3.0 * x**3, rel=0.05)
    small = detect.kl_single_letter(0.05, 1.0)
    assert small.quadrature == pytest.approx(small.leading, rel=0.01)


def test_exponent_at_origin():
    a, nw, r = 0.5, 1.0, 0.02
    report = detect.kl_exponent_f(0.0, r, a, nw)
    assert report.f == 0.0 and report.f0 == 0.0
    assert 0.0 < report.mutual_information <= a * a / nw
    assert report.fprime0 == pytest.approx(r - report.mutual_information)
    assert report.fsecond0 <= 0.0, "f is concave at the origin"
    half = detect.kl_exponent_f(0.5, r, a, nw)
    assert math.isfinite(half.f)
    with pytest.raises(ValueError, match="rho"):
        detect.kl_exponent_f(1.5, r, a, nw)


def test_exponent_slope_by_central_difference():
    a, nw, r, h = 0.5, 1.0, 0.02, 1e-4
    report = detect.kl_exponent_f(0.0, r, a, nw)
    slope = (detect.exponent_value(h, r, a, nw) - detect.exponent_value(-h, r, a, nw)) / (2.0 * h)
    assert slope == pytest.approx(report.fprime0, abs=1e-6)
    assert detect.exponent_value(0.5, r, a, nw) == detect.kl_exponent_f(0.5, r, a, nw).f
    with pytest.raises(ValueError, match="rho"):
        detect.exponent_value(-1.5, r, a, nw)
    check = run_checks(["kl_exponent_origin"])[0]
    assert check.passed, f"central-difference check failed: {check.value}"


@pytest.mark.parametrize("a", [0.1, 0.5, 1.5])
def test_crossover_root(a):
    dists = OutputDists(nw=1.0, a=a)
    nu = detect.nu_crossover(a, 1.0)
    assert float(dists.log_qtilde(nu)) == pytest.approx(float(dists.log_q0(nu)), abs=1e-9)
    assert float(dists.llr(0.0)) < 0 < float(dists.llr(2.0 * nu))


def test_crossover_needs_signal():
    with pytest.raises(ValueError, match="a > 0"):
        detect.nu_crossover(0.0, 1.0)


def test_power_detector():
    assert detect.power_threshold(10, 2.0, 4.0) == 12.0
    assert not detect.power_detector(np.zeros(10), 2.0, 4.0)
    assert detect.power_detector(np.full(10, 2.0), 2.0, 4.0)
    assert detect.power_statistic(np.ones((4, 3))).tolist() == [3.0] * 4


def test_detection_result_counts():
    h0 = np.array([-1.0, -1.0, 1.0, -1.0])
    h1 = np.array([1.0, 1.0, -1.0, 1.0])
    result = detect.detection_result("power", h0, h1, 0.0, seed=1)
    assert (result.p_fa, result.p_md, result.sum, result.trials) == (0.25, 0.25, 0.5, 4)
    assert result.stderr == pytest.approx(math.hypot(math.sqrt(0.25 * 0.75 / 4), math.sqrt(0.25 * 0.75 / 4)))


def test_likelihood_ratio_beats_radiometer():
    n, nw = 256, 1.0
    a = scheme.amplitude(n, nw, 0.5, "tv")
    lrt = detect.run_detector("lrt-product", n, a, nw, trials=3000, seed=2)
    power = detect.run_detector("power", n, a, nw, trials=3000, seed=2)
    slack = 3 * math.hypot(lrt.stderr, power.stderr)
    assert lrt.sum <= power.sum + slack, f"LRT {lrt.sum} vs radiometer {power.sum}"
    assert lrt.sum >= 1.0 - 0.5 - slack, "the optimal test cannot beat 1 - delta"
    with pytest.raises(ValueError, match="needs a codebook"):
        detect.run_detector("lrt-codebook", n, a, nw, trials=10, seed=2)


def test_cross_term_vanishes():
    cb = _codebook(n=32, m=8, k=4)
    assert detect.cross_term_exact(cb, 1.0) == pytest.approx(0.0, abs=1e-12)


def test_roc_sweep():
    h0 = np.array([0.0, 1.0, 2.0, 3.0])
    h1 = np.array([2.0, 3.0, 4.0, 5.0])
    assert detect.roc_sweep(h0, h1, [2.5]) == [(2.5, 0.25, 0.25)]
    rows = detect.roc_sweep(h0, h1, points=11)
    assert len(rows) == 11
    p_fa = [r[1] for r in rows]
    p_md = [r[2] for r in rows]
    assert p_fa == sorted(p_fa, reverse=True) and p_md == sorted(p_md)


def test_mixture_budget():
    cb = _codebook(n=16, m=8, k=4)
    with pytest.raises(BudgetExceeded, match="subsample"):
        detect.tv_codebook(cb, 1.0, trials=10, seed=0, budget=10)
    report = detect.tv_codebook(cb, 1.0, trials=50, seed=0, subsample=8, budget=10)
    assert report.subsample == 8
    assert detect.tv_codebook(cb, 1.0, trials=50, seed=0).subsample is None


def test_kl_codebook_decomposition():
    cb = _codebook(n=32, m=16, k=16)
    report = detect.kl_codebook(cb, 1.0, trials=500, seed=4)
    assert report.cross_term == pytest.approx(0.0, abs=1e-12)
    total = report.vs_ensemble.value + report.ensemble + report.cross_term
    slack = 6 * math.hypot(report.vs_silence.stderr, report.vs_ensemble.stderr) + 0.01
    assert abs(report.vs_silence.value - total) < slack + 1e-9
    with pytest.raises(ValueError, match="two trials"):
        detect.kl_codebook(cb, 1.0, trials=1, seed=4)


def test_soft_covering_bound_decreases_with_codebook_size():
    n, a = 256, scheme.amplitude(256, 1.0, 0.5, "tv")
    bounds = [detect.soft_covering_bound(n, a, 1.0, log_mk) for log_mk in (2.0, 10.0, 40.0)]
    assert all(0.0 <= b <= 1.0 for b in bounds)
    assert bounds[0] >= bounds[1] >= bounds[2]
    assert bounds[2] < 0.05


@pytest.mark.slow
def test_large_codebook_resolves_the_ensemble():
    cb = _codebook(n=64, m=64, k=64, seed=8)
    report = detect.tv_codebook(cb, 1.0, trials=2000, seed=8)
    assert report.vs_ensemble.value < 0.1 + 3 * report.vs_ensemble.stderr, f"{report.vs_ensemble}"
    closed = detect.tv_closed_form(cb.n, cb.a_n, 1.0)
    assert abs(report.vs_silence.value - closed) < 0.12 + 3 * report.vs_silence.stderr
