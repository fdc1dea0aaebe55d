import math

import numpy as np
import pytest

from covertlab.core import streams
from covertlab.core.errors import BudgetExceeded, CodebookIndexError, NoGoodSubcode
from covertlab.core.special import q_inv
from covertlab.engines import detect, scheme
from covertlab.engines.channel import AwgnSpec
from covertlab.engines.pulses import RrcPulse


def test_amplitude_formulas():
    n, nw, delta = 4096, 1.5, 0.3
    tv = (2 / n) ** 0.25 * math.sqrt(q_inv((1 - delta) / 2) * nw) * (1 - n ** (-1 / 8))
    kl = (delta * nw**2 / n) ** 0.25 * (1 - n ** (-1 / 9))
    assert scheme.amplitude(n, nw, delta, "tv") == pytest.approx(tv, rel=1e-14)
    assert scheme.amplitude(n, nw, delta, "kl") == pytest.approx(kl, rel=1e-14)


def test_derived_sizes_and_threshold():
    p = scheme.derive_params(1024, 1.0, 2.0, 0.5)
    energy = p.a_n**2 * 1024
    assert p.energy == pytest.approx(energy)
    assert p.log_m == pytest.approx((1 - 1 / math.log(1024)) * energy / 2.0)
    inv = 1 / math.log(1024)
    assert p.log_k == pytest.approx(((1 + inv) - (1 - inv) * 0.5) * energy / 1.0)
    assert p.gamma == pytest.approx((1 - 1024 ** (-1 / 8)) * energy / 2.0)
    assert p.m == math.floor(math.exp(p.log_m))
    assert not p.overflow


def test_key_vanishes_for_a_noisy_warden():
    p = scheme.derive_params(4096, 3.0, 1.0, 0.5)
    assert p.log_k == 0.0 and p.k == 1, "a noisier warden needs no shared key"


def test_sizes_overflow_at_large_n():
    p = scheme.derive_params(10**8, 1.0, 1.0, 0.5)
    assert p.overflow and p.m == scheme.SIZE_CAP
    with pytest.raises(BudgetExceeded, match="analytical only"):
        scheme.generate_codebook(p, seed=0)


@pytest.mark.parametrize("kwargs, message", [
    ({"n": 2, "nw": 1.0, "nb": 1.0, "delta": 0.5}, "at least 3"),
    ({"n": 64, "nw": 1.0, "nb": 1.0, "delta": 1.0}, "delta"),
    ({"n": 64, "nw": 0.0, "nb": 1.0, "delta": 0.5}, "noise"),
])
def test_invalid_parameters(kwargs, message):
    with pytest.raises(ValueError, match=message):
        scheme.derive_params(**kwargs)


def test_simulation_point_keeps_amplitude_and_threshold():
    p = scheme.derive_params(512, 1.0, 1.0, 0.5)
    sim = scheme.simulation_params(p, rate_backoff=0.5)
    assert sim.a_n == p.a_n and sim.gamma == p.gamma
    assert sim.log_m == pytest.approx(0.5 * p.log_m)
    forced = scheme.simulation_params(p, m=10, k=3)
    assert (forced.m, forced.k) == (10, 3)
    assert forced.log_m == pytest.approx(math.log(10))


@pytest.fixture
def small_codebook():
    params = scheme.simulation_params(scheme.derive_params(64, 1.0, 1.0, 0.5), m=16, k=4)
    return scheme.generate_codebook(params, seed=21)


def test_codebook_is_regenerable_per_row(small_codebook):
    cb = small_codebook
    assert cb.signs.shape == (64, 64)
    again = scheme.generate_codebook(cb.params, seed=21)
    assert np.array_equal(cb.signs, again.signs), "same seed must give the same codebook"
    row = 37
    assert np.array_equal(cb.signs[row], streams.sign_bits(21, scheme.CODEBOOK_DOMAIN, row, 64))
    other = scheme.generate_codebook(cb.params, seed=22)
    assert not np.array_equal(cb.signs, other.signs)


def test_codebook_bits_are_fair(small_codebook):
    mean = small_codebook.signs.mean()
    assert abs(mean - 0.5) < 4 * 0.5 / math.sqrt(small_codebook.signs.size)


def test_codebook_budget():
    params = scheme.simulation_params(scheme.derive_params(64, 1.0, 1.0, 0.5), m=100, k=100)
    with pytest.raises(BudgetExceeded, match="materialization budget"):
        scheme.generate_codebook(params, seed=0, budget=10_000)


def test_indexing_and_encoding(small_codebook):
    cb = small_codebook
    assert cb.row_index(1, 1) == 0
    assert cb.row_index(2, 3) == 6
    assert cb.subcode_rows(2).tolist() == list(range(1, 64, 4))
    x = scheme.encode(cb, 5, 2)
    assert np.allclose(np.abs(x), cb.a_n)
    assert np.array_equal(x, cb.subcode(2)[4])
    assert not np.any(scheme.encode(cb, 0, 3)), "message 0 is silence"
    with pytest.raises(CodebookIndexError, match="outside"):
        scheme.encode(cb, 17, 1)
    with pytest.raises(CodebookIndexError, match="outside"):
        scheme.encode(cb, 0, 5)


def test_enumeration_covers_every_pattern():
    params = scheme.derive_params(5, 1.0, 1.0, 0.5)
    cb = scheme.enumerate_codebook(params, k=4)
    assert cb.size == 32 and cb.m == 8
    assert len({tuple(row) for row in cb.signs.tolist()}) == 32
    with pytest.raises(BudgetExceeded, match="n <= 12"):
        scheme.enumerate_codebook(scheme.derive_params(13, 1.0, 1.0, 0.5))


def test_noiseless_decoding(small_codebook):
    cb = small_codebook
    for s in (1, 4):
        for m in (1, 9, 16):
            out = scheme.decode(cb, s, scheme.encode(cb, m, s))
            assert out.status == scheme.DecodeStatus.DECODED and out.message == m, f"(m={m}, s={s}) not recovered"
    silent = scheme.decode(cb, 1, np.zeros(cb.n))
    assert silent.status == scheme.DecodeStatus.SILENT and silent.message == 0


def test_decoder_statistic_values():
    x = np.array([[1.0, 1.0], [1.0, -1.0]])
    y = np.array([1.0, 1.0])
    assert scheme.decoder_statistic(x, y, 2.0).tolist() == [1.0, -1.0]


def test_decoder_statistic_is_the_log_likelihood_ratio():
    rng = np.random.default_rng(3)
    nb, a, n = 1.7, 0.4, 32
    dists = detect.OutputDists(nw=nb, a=a)
    for _ in range(20):
        x = a * rng.choice([-1.0, 1.0], size=n)
        y = rng.normal(0.0, 2.0, size=n)
        explicit = sum(float(dists.log_qa(yi, int(np.sign(xi))) - dists.log_q0(yi)) for xi, yi in zip(x, y))
        assert scheme.decoder_statistic(x, y, nb) == pytest.approx(explicit, abs=1e-9)


@pytest.mark.parametrize("c", [0.1, 0.5, 1.0, 3.0, 20.0])
def test_parameters_scale_with_noise(c):
    base = scheme.derive_params(2048, 1.0, 1.5, 0.4, "tv")
    scaled = scheme.derive_params(2048, c * 1.0, c * 1.5, 0.4, "tv")
    assert scaled.a_n**2 == pytest.approx(c * base.a_n**2, rel=1e-12), "a_n^2 must be proportional to N_w"
    assert scaled.log_m == pytest.approx(base.log_m, rel=1e-12)
    assert scaled.log_k == pytest.approx(base.log_k, rel=1e-12, abs=1e-15)


def test_waveform_has_codeword_coefficients(small_codebook):
    pulse = RrcPulse(t0=1.0, beta=0.5)
    x = scheme.encode(small_codebook, 3, 1)[:8]
    t, signal = scheme.to_waveform(x, pulse, sample_rate=64.0)
    assert t.size == signal.size == 8 * 64 + 1
    assert float(np.sum(signal**2) / 64.0) == pytest.approx(float(np.sum(x**2)), rel=1e-2)


def test_error_rates_are_seeded(small_codebook):
    channel = AwgnSpec(intensity=1.0, seed=4)
    a = scheme.measure_error_rates(small_codebook, channel, 50, seed=4)
    b = scheme.measure_error_rates(small_codebook, channel, 50, seed=4)
    assert a == b
    assert len(a.per_subcode) == 4 and len(a.subcode_errors) == 4
    worst = max(e.value for e in a.per_subcode)
    assert a.p_err == pytest.approx(worst + a.false_activity.value)
    assert 0.0 <= a.false_activity.value <= 1.0


def _operating_point(n, nw, nb, delta, backoff, k=None):
    params = scheme.derive_params(n, nw, nb, delta)
    return scheme.simulation_params(params, rate_backoff=backoff, k=k)


@pytest.mark.slow
def test_reliable_at_high_snr():
    sim = _operating_point(4096, 1.5, 1.0, 0.9, 0.08, k=1)
    cb = scheme.generate_codebook(sim, seed=1)
    rates = scheme.measure_error_rates(cb, AwgnSpec(intensity=1.0, seed=1), 2000, seed=1)
    assert rates.p_err < 0.05, f"P_err {rates.p_err} at a high-SNR operating point"


@pytest.mark.slow
def test_error_grows_past_capacity():
    def p_err(backoff):
        sim = _operating_point(1024, 1.0, 1.0, 0.2, backoff, k=1)
        cb = scheme.generate_codebook(sim, seed=2)
        return scheme.measure_error_rates(cb, AwgnSpec(intensity=1.0, seed=2), 500, seed=2).p_err

    below, above = p_err(0.8), p_err(1.2)
    assert above > 0.5, f"P_err {above} above the rate limit"
    assert above > below


def test_rearrangement_keeps_every_codeword(small_codebook):
    cb = small_codebook
    errors = [0.01, 0.9, 0.02, 0.03]
    rc = scheme.rearrange(cb, errors, 0.2)
    assert rc.is_bijection(), "rearrangement must be a permutation of the rows"
    assert 2 not in rc.kept
    assert rc.k_prime == min(math.floor((1 - math.sqrt(0.2)) * 4), 3)
    assert len(rc.undecodable) == 16 * (4 - rc.k_prime)
    assert max(rc.predicted_errors(errors)) <= rc.error_bound
    merged = rc.materialize()
    assert merged.size == cb.size
    assert sorted(map(tuple, merged.signs.tolist())) == sorted(map(tuple, cb.signs.tolist()))


def test_rearrangement_of_all_good_subcodes_is_identity(small_codebook):
    cb = small_codebook
    rc = scheme.rearrange(cb, [0.01, 0.02, 0.01, 0.03], 0.25)
    assert (rc.k_prime, rc.m_prime) == (4, 16)
    assert rc.undecodable == set() and rc.kept == [1, 2, 3, 4]
    assert rc.epsilon_hat == 0.0 and rc.error_bound == pytest.approx(0.5)
    assert [rows for rows in rc.assignment] == [cb.subcode_rows(s).tolist() for s in range(1, 5)]
    assert rc.is_bijection()


def test_rearrangement_pools_one_bad_subcode(small_codebook):
    cb = small_codebook
    errors = [0.01, 0.02, 0.8, 0.03]
    rc = scheme.rearrange(cb, errors, 0.25)
    assert rc.k_prime == 2 and rc.kept == [1, 2], "the good sub-code of highest index is pooled"
    assert len(rc.undecodable) == 2 * 16
    assert rc.m_prime == 2 * 16
    assert rc.epsilon_hat == pytest.approx(1.0)
    assert rc.is_bijection()
    assert max(rc.predicted_errors(errors)) <= rc.error_bound


def test_rearrangement_without_good_subcode(small_codebook):
    with pytest.raises(NoGoodSubcode, match="sqrt"):
        scheme.rearrange(small_codebook, [0.9, 0.8, 0.95, 0.7], 0.1)
    with pytest.raises(ValueError, match="expected 4"):
        scheme.rearrange(small_codebook, [0.1], 0.1)
