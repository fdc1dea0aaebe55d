"""BPSK random-coding scheme: constants, codebooks, threshold decoding, rearrangement."""

import logging
import math
from enum import IntEnum

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator

from covertlab.core import streams
from covertlab.core.errors import BudgetExceeded, CodebookIndexError, NoGoodSubcode
from covertlab.core.special import q_inv
from covertlab.core.workers import parallel_map
from covertlab.engines.channel import AwgnSpec, WaveformSim, transmit_coeff, transmit_waveform
from covertlab.engines.pulses import RrcPulse
from covertlab.schemas.covert_schemas import ErrorRates, McEstimate, Metric, SchemeParams

logger = logging.getLogger(__name__)

SIZE_CAP = 2**62
MATERIALIZATION_BUDGET = 2**28  # sign bits
CODEBOOK_DOMAIN = "codebook"


def amplitude(n: float, nw: float, delta: float, metric: Metric) -> float:
    if metric == "tv":
        return (2.0 / n) ** 0.25 * math.sqrt(q_inv((1.0 - delta) / 2.0) * nw) * (1.0 - n ** (-1.0 / 8.0))
    return (delta * nw * nw / n) ** 0.25 * (1.0 - n ** (-1.0 / 9.0))


def log_sizes(n: float, nw: float, nb: float, delta: float, metric: Metric) -> tuple[float, float, float]:
    a_n = amplitude(n, nw, delta, metric)
    energy = a_n * a_n * n
    inv_ln = 1.0 / math.log(n)
    log_m = (1.0 - inv_ln) * energy / nb
    log_k = max((1.0 + inv_ln) - (1.0 - inv_ln) * nw / nb, 0.0) * energy / nw
    return a_n, log_m, log_k


def log_codebook_size(n: float, nw: float, nb: float, delta: float, metric: Metric) -> float:
    """log(MK) from the scheme formulas, for real-valued n (used by the slackness f(n))."""
    _, log_m, log_k = log_sizes(n, nw, nb, delta, metric)
    return log_m + log_k


def _count(log_size: float) -> tuple[int, bool]:
    if log_size >= math.log(SIZE_CAP):
        return SIZE_CAP, True
    return max(1, int(math.floor(math.exp(log_size)))), False


def derive_params(n: int, nw: float, nb: float, delta: float, metric: Metric = "tv") -> SchemeParams:
    if n < 3:
        raise ValueError(f"blocklength must be at least 3, got {n}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if nw <= 0 or nb <= 0:
        raise ValueError("noise intensities must be positive")
    a_n, log_m, log_k = log_sizes(n, nw, nb, delta, metric)
    gamma = (1.0 - n ** (-1.0 / 8.0)) * a_n * a_n * n / nb
    m, m_over = _count(log_m)
    k, k_over = _count(log_k)
    return SchemeParams(n=n, nw=nw, nb=nb, delta=delta, metric=metric, a_n=a_n, log_m=log_m, log_k=log_k,
                        gamma=gamma, m=m, k=k, overflow=m_over or k_over)


def simulation_params(params: SchemeParams, rate_backoff: float = 0.8, key_backoff: float = 1.0,
                      m: int | None = None, k: int | None = None) -> SchemeParams:
    """Desk-scale operating point: scale log M and log K (or force M, K); a_n and gamma stay."""
    log_m = rate_backoff * params.log_m
    log_k = key_backoff * params.log_k
    new_m, m_over = (m, False) if m is not None else _count(log_m)
    new_k, k_over = (k, False) if k is not None else _count(log_k)
    return params.model_copy(update={
        "log_m": math.log(new_m) if m is not None else log_m,
        "log_k": math.log(new_k) if k is not None else log_k,
        "m": new_m, "k": new_k, "overflow": m_over or k_over,
    })


class Codebook(BaseModel):
    """MK x n sign bits; bit 1 is +a_n. Row (m-1)*K + (s-1) holds message m under key s."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n: int
    m: int
    k: int
    a_n: float
    signs: np.ndarray
    seed: int | None = None
    params: SchemeParams | None = None

    @model_validator(mode="after")
    def _shape(self) -> "Codebook":
        if self.signs.shape != (self.m * self.k, self.n):
            raise ValueError(f"sign matrix shape {self.signs.shape} does not match M*K x n = {self.m * self.k} x {self.n}")
        return self

    @property
    def size(self) -> int:
        return self.m * self.k

    def sign_matrix(self) -> np.ndarray:
        return self.signs.astype(np.int8) * 2 - 1

    def codewords(self) -> np.ndarray:
        return self.a_n * self.sign_matrix().astype(float)

    def row_index(self, m: int, s: int) -> int:
        if not (1 <= m <= self.m and 1 <= s <= self.k):
            raise CodebookIndexError(f"(m={m}, s={s}) outside 1..{self.m} x 1..{self.k}")
        return (m - 1) * self.k + (s - 1)

    def subcode_rows(self, s: int) -> np.ndarray:
        if not 1 <= s <= self.k:
            raise CodebookIndexError(f"key index {s} outside 1..{self.k}")
        return np.arange(self.m) * self.k + (s - 1)

    def subcode(self, s: int) -> np.ndarray:
        return self.a_n * self.sign_matrix()[self.subcode_rows(s)].astype(float)


def _check_budget(rows: int, n: int, budget: int) -> None:
    if rows * n > budget:
        raise BudgetExceeded(f"codebook of {rows} x {n} sign bits exceeds the materialization budget {budget}",
                             stage="generate")


def generate_codebook(params: SchemeParams, seed: int, budget: int = MATERIALIZATION_BUDGET) -> Codebook:
    """Fair sign bits from counter-based streams keyed by (seed, row)."""
    if params.overflow:
        raise BudgetExceeded("M or K overflowed; the codebook is analytical only", stage="generate")
    rows = params.m * params.k
    _check_budget(rows, params.n, budget)
    chunks = [range(start, min(start + 1024, rows)) for start in range(0, rows, 1024)]
    blocks = parallel_map(
        lambda chunk: np.stack([streams.sign_bits(seed, CODEBOOK_DOMAIN, r, params.n) for r in chunk]), chunks)
    signs = np.concatenate(blocks, axis=0) if blocks else np.zeros((0, params.n), dtype=np.uint8)
    logger.info("generated codebook M=%d K=%d n=%d seed=%d", params.m, params.k, params.n, seed)
    return Codebook(n=params.n, m=params.m, k=params.k, a_n=params.a_n, signs=signs, seed=seed, params=params)


def enumerate_codebook(params: SchemeParams, k: int = 1) -> Codebook:
    """All 2^n sign patterns exactly once (n <= 12), split into k sub-codes."""
    n = params.n
    if n > 12:
        raise BudgetExceeded(f"full enumeration is limited to n <= 12, got {n}", stage="generate")
    total = 2**n
    if total % k:
        raise ValueError(f"k={k} does not divide 2^{n}")
    patterns = ((np.arange(total)[:, None] >> np.arange(n)) & 1).astype(np.uint8)
    m = total // k
    return Codebook(n=n, m=m, k=k, a_n=params.a_n, signs=patterns, seed=None,
                    params=params.model_copy(update={"m": m, "k": k, "overflow": False}))


def encode(cb: Codebook, m: int, s: int) -> np.ndarray:
    """Codeword for message m under key s; m = 0 is silence (all zeros)."""
    if m == 0:
        if not 1 <= s <= cb.k:
            raise CodebookIndexError(f"key index {s} outside 1..{cb.k}")
        return np.zeros(cb.n)
    return cb.a_n * (cb.signs[cb.row_index(m, s)].astype(float) * 2.0 - 1.0)


def to_waveform(x: ArrayLike, pulse: RrcPulse, sample_rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Noiseless samples of sum_i x_i g_i(t) on [0, n T0]."""
    return transmit_waveform(x, pulse, WaveformSim(sample_rate=sample_rate), None)


class DecodeStatus(IntEnum):
    ERROR = -1
    SILENT = 0
    DECODED = 1


class DecodeOutcome(BaseModel):
    message: int
    status: DecodeStatus


def decoder_statistic(x: ArrayLike, y: ArrayLike, nb: float) -> np.ndarray:
    """L(x, y) = (2/N_b) <x, y> - |x|^2 / N_b; x may hold one codeword per row."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (2.0 * (x @ y) - np.sum(x * x, axis=-1)) / nb


def _outcomes(stats: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Per trial: number of rows above threshold and the first matching message (1-based)."""
    above = stats > gamma
    return above.sum(axis=1), np.argmax(above, axis=1) + 1


def decode(cb: Codebook, s: int, y: ArrayLike, params: SchemeParams | None = None) -> DecodeOutcome:
    params = params or cb.params
    if params is None:
        raise ValueError("decode needs scheme parameters for N_b and gamma")
    y = np.asarray(y, dtype=float)
    if y.shape != (cb.n,):
        raise ValueError(f"received vector must have length {cb.n}")
    stats = decoder_statistic(cb.subcode(s), y, params.nb)
    matches = np.flatnonzero(stats > params.gamma)
    if matches.size == 0:
        return DecodeOutcome(message=0, status=DecodeStatus.SILENT)
    if matches.size > 1:
        return DecodeOutcome(message=0, status=DecodeStatus.ERROR)
    return DecodeOutcome(message=int(matches[0]) + 1, status=DecodeStatus.DECODED)


def _estimate(errors: int, trials: int, seed: int) -> McEstimate:
    p = errors / trials
    return McEstimate(value=p, stderr=math.sqrt(max(p * (1.0 - p), 0.0) / trials), trials=trials, seed=seed)


def measure_error_rates(cb: Codebook, channel: AwgnSpec, trials: int, seed: int,
                        params: SchemeParams | None = None) -> ErrorRates:
    """Max-average error: per sub-code message errors (uniform messages) plus false activity under silence.

    Trial t of sub-code s draws its message from stream (seed, s, t) and its noise from
    channel trial s*trials + t; silent trials use channel trials K*trials + t. Multiple
    matches count as message errors.
    """
    params = params or cb.params
    if params is None:
        raise ValueError("error measurement needs scheme parameters")
    if trials < 1:
        raise ValueError("trials must be >= 1")

    def run_subcode(s: int) -> int:
        code = cb.subcode(s)
        messages = np.array([streams.stream(seed, "message", s, t).integers(1, cb.m + 1) for t in range(trials)])
        received = np.stack([transmit_coeff(code[msg - 1], channel, (s - 1) * trials + t)
                             for t, msg in enumerate(messages)])
        counts, first = _outcomes(decoder_statistic(code, received.T, params.nb).T, params.gamma)
        return int(np.sum((counts != 1) | (first != messages)))

    errors = parallel_map(run_subcode, range(1, cb.k + 1))
    per_subcode = [_estimate(e, trials, seed) for e in errors]

    false_hits = 0
    silence = np.zeros(cb.n)
    for s in range(1, cb.k + 1):
        code = cb.subcode(s)
        received = np.stack([transmit_coeff(silence, channel, cb.k * trials + (s - 1) * trials + t)
                             for t in range(trials)])
        counts, _ = _outcomes(decoder_statistic(code, received.T, params.nb).T, params.gamma)
        false_hits += int(np.sum(counts > 0))
    false_activity = _estimate(false_hits, trials * cb.k, seed)

    worst = max(per_subcode, key=lambda e: e.value)
    return ErrorRates(
        per_subcode=per_subcode,
        false_activity=false_activity,
        subcode_errors=[e.value + false_activity.value for e in per_subcode],
        p_err=worst.value + false_activity.value,
        stderr=math.hypot(worst.stderr, false_activity.stderr),
    )


class RearrangedCodebook(BaseModel):
    """Codewords of bad sub-codes dealt into the kept ones as undecodable slots."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    base: Codebook
    epsilon: float
    k_prime: int
    m_prime: int
    assignment: list[list[int]] = Field(description="Base rows of new sub-code s', in slot order m' = 1..")
    undecodable: set[tuple[int, int]] = Field(description="(s', m') slots holding pooled codewords.")
    kept: list[int] = Field(description="Base key index behind each new sub-code.")
    epsilon_hat_nominal: float
    epsilon_hat: float = Field(description="Realized largest pool share per kept sub-code, relative to M.")

    @property
    def error_bound(self) -> float:
        return math.sqrt(self.epsilon) + self.epsilon_hat

    def predicted_errors(self, per_subcode_err: list[float]) -> list[float]:
        """Error of each new sub-code: base errors on its own M rows, certain error on pooled slots."""
        out = []
        for s_new, rows in enumerate(self.assignment, start=1):
            pooled = sum(1 for slot in range(1, len(rows) + 1) if (s_new, slot) in self.undecodable)
            size = len(rows)
            own = size - pooled
            out.append((own * per_subcode_err[self.kept[s_new - 1] - 1] + pooled) / size)
        return out

    def all_rows(self) -> np.ndarray:
        return np.concatenate([np.asarray(rows, dtype=np.int64) for rows in self.assignment])

    def is_bijection(self) -> bool:
        rows = self.all_rows()
        return rows.size == self.base.size and np.array_equal(np.sort(rows), np.arange(self.base.size))

    def materialize(self) -> Codebook:
        """All codewords in new slot order, as a single-key codebook (for ESD checks)."""
        rows = self.all_rows()
        return Codebook(n=self.base.n, m=rows.size, k=1, a_n=self.base.a_n, signs=self.base.signs[rows],
                        seed=self.base.seed, params=self.base.params)


def rearrange(cb: Codebook, per_subcode_err: list[float], epsilon_n: float) -> RearrangedCodebook:
    if len(per_subcode_err) != cb.k:
        raise ValueError(f"expected {cb.k} sub-code errors, got {len(per_subcode_err)}")
    if not 0.0 < epsilon_n < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon_n}")
    root = math.sqrt(epsilon_n)
    good = [s for s in range(1, cb.k + 1) if per_subcode_err[s - 1] <= root]
    if not good:
        raise NoGoodSubcode(f"every sub-code has error above sqrt(epsilon) = {root:.4g}", stage="rearrange")
    if len(good) == cb.k:
        logger.info("rearrange: all %d sub-codes below sqrt(epsilon), nothing pooled", cb.k)
        return RearrangedCodebook(base=cb, epsilon=epsilon_n, k_prime=cb.k, m_prime=cb.m,
                                  assignment=[cb.subcode_rows(s).tolist() for s in good], undecodable=set(),
                                  kept=good, epsilon_hat_nominal=0.0, epsilon_hat=0.0)
    # good sub-codes of highest index are pooled too when the bad ones fall short of (1 - sqrt(eps)) K
    k_prime = min(max(1, math.floor((1.0 - root) * cb.k)), len(good))
    kept = good[:k_prime]
    pooled_keys = [s for s in range(1, cb.k + 1) if s not in kept]
    pool = np.sort(np.concatenate([cb.subcode_rows(s) for s in pooled_keys])) if pooled_keys else np.array([], dtype=int)

    assignment = [cb.subcode_rows(s).tolist() for s in kept]
    undecodable: set[tuple[int, int]] = set()
    for j, row in enumerate(pool.tolist()):
        target = j % k_prime
        assignment[target].append(int(row))
        undecodable.add((target + 1, len(assignment[target])))

    m_prime = max(len(rows) for rows in assignment)
    nominal = root / (1.0 - root)
    realized = max(len(rows) - cb.m for rows in assignment) / cb.m
    logger.info("rearrange: K'=%d of K=%d, pooled %d rows, M'=%d", k_prime, cb.k, pool.size, m_prime)
    return RearrangedCodebook(base=cb, epsilon=epsilon_n, k_prime=k_prime, m_prime=m_prime, assignment=assignment,
                              undecodable=undecodable, kept=kept, epsilon_hat_nominal=nominal,
                              epsilon_hat=realized)
