import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from covertlab.core.errors import ConfigError
from covertlab.core.special import nats_to_bits

Metric = Literal["tv", "kl"]


def _config_error(source: str, exc: ValidationError) -> ConfigError:
    problems = "; ".join(
        f"{'.'.join(str(part) for part in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()
    )
    return ConfigError(f"invalid {source}: {problems}", stage="config")


class MaskConstraint(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    u_db: float = Field(alias="U_dB", gt=0, description="Out-of-band attenuation U_i in dB.")
    alpha: float = Field(gt=0, description="Bandwidth multiplier alpha_i.")
    eta: float = Field(gt=0, description="Required in-band energy fraction eta_i.")

    @property
    def v(self) -> float:
        return 10.0 ** (-self.u_db / 10.0)


class SpectralMask(BaseModel):
    """Mask S(W, {U_i}, {alpha_i}, {eta_i}); each sequence must be non-decreasing."""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    w: float = Field(alias="W", gt=0, description="Bandwidth parameter W in Hz.")
    constraints: list[MaskConstraint] = Field(min_length=1)

    @model_validator(mode="after")
    def _non_decreasing(self) -> "SpectralMask":
        for name in ("u_db", "alpha", "eta"):
            values = [getattr(c, name) for c in self.constraints]
            for i in range(1, len(values)):
                if values[i] < values[i - 1]:
                    raise ValueError(f"constraints.{i}.{name} must be >= constraints.{i - 1}.{name}")
        return self

    @property
    def v(self) -> list[float]:
        return [c.v for c in self.constraints]

    def with_bandwidth(self, w: float) -> "SpectralMask":
        return SpectralMask(w=w, constraints=self.constraints)

    def to_json_dict(self) -> dict:
        return self.model_dump(by_alias=True)

    @classmethod
    def from_dict(cls, data: dict, source: str = "mask") -> "SpectralMask":
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise _config_error(source, e) from e

    @classmethod
    def from_json_file(cls, path: str | Path) -> "SpectralMask":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read mask file {path}: {e}", stage="config") from e
        return cls.from_dict(data, source=f"mask file {path}")


class FrequencyGrid(BaseModel):
    model_config = ConfigDict(frozen=True)

    points: int = Field(default=4096, ge=16)
    cross_check: bool = Field(default=True, description="Repeat at half resolution and compare.")
    rel_tol: float = Field(default=1e-6, gt=0)


class ConstraintMargin(BaseModel):
    index: int
    alpha_w: float = Field(description="Band edge alpha_i * W in Hz.")
    threshold: float = Field(description="V_i * [E]_max, possibly slackness-tightened.")
    out_of_band_peak: float
    db_margin: float = Field(description="10 log10(threshold / out-of-band peak); > 0 passes.")
    in_band_fraction: float
    energy_margin: float = Field(description="In-band fraction minus the required fraction; > 0 passes.")

    @property
    def passes(self) -> bool:
        return self.db_margin > 0 and self.energy_margin > 0


class FitReport(BaseModel):
    fits: bool
    peak: float = Field(description="[E]_max used for the dB clauses.")
    total_energy: float
    margins: list[ConstraintMargin]
    binding: int = Field(description="Index of the constraint with the smallest margin.")


class ConcentrationReport(BaseModel):
    holds: bool
    worst_ratio: float = Field(description="max_f |E_tilde - E_hat| / E_tilde over the grid.")
    ratio_bound: float = Field(description="n / (MK)^(1/4).")
    max_cross_term: float
    cross_term_bound: float = Field(description="(MK)^(3/4).")
    violating_pair: tuple[int, int] | None = None
    violating_frequency: float | None = None
    failure_probability_bound: float = Field(description="2 n^2 exp(-sqrt(MK)/2).")


class OptimizerResult(BaseModel):
    t0_star: float
    beta_star: float
    c_beta_curve: list[tuple[float, float]] = Field(description="(beta, c(beta) = W T0*(beta)) samples.")
    binding: int
    tol: float
    w: float

    @property
    def c_min(self) -> float:
        return self.w * self.t0_star


class SlacknessSpec(BaseModel):
    """Total time T plus the scheme parameters that turn a blocklength into MK = f(n)."""
    model_config = ConfigDict(frozen=True)

    t: float = Field(gt=0)
    nw: float = Field(gt=0)
    nb: float = Field(gt=0)
    delta: float = Field(gt=0, lt=1)
    metric: Metric = "tv"


class BlocklengthResult(BaseModel):
    n: int
    fit_probability_bound: float
    c_min: float
    w: float
    t: float
    xi: float


class SchemeParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int
    nw: float
    nb: float
    delta: float
    metric: Metric
    a_n: float
    log_m: float
    log_k: float
    gamma: float
    m: int
    k: int
    overflow: bool = Field(default=False, description="M or K exceed 2^62; analytical use only.")

    @property
    def energy(self) -> float:
        return self.a_n**2 * self.n


class McEstimate(BaseModel):
    value: float
    stderr: float
    trials: int
    seed: int


class ErrorRates(BaseModel):
    per_subcode: list[McEstimate] = Field(description="Missed or garbled decoding per sub-code.")
    false_activity: McEstimate = Field(description="Non-silent decoding when nothing is sent.")
    subcode_errors: list[float] = Field(description="Per sub-code error plus false activity, for rearrangement.")
    p_err: float
    stderr: float


class DetectionResult(BaseModel):
    detector: str
    p_fa: float
    p_md: float
    sum: float
    stderr: float
    trials: int
    threshold: float


class TvReport(BaseModel):
    closed_form: float
    monte_carlo: McEstimate | None = None


class CodebookTv(BaseModel):
    vs_silence: McEstimate = Field(description="V(Q_hat, Q0^n).")
    vs_ensemble: McEstimate = Field(description="V(Q_hat, Q_tilde^n).")
    subsample: int | None = Field(default=None, description="Codewords used per mixture evaluation when subsampled.")


class BerryEsseenMoments(BaseModel):
    mu0: float
    var0: float
    s0: float
    mu1: float
    var1: float
    s1: float
    leading: dict[str, float]


class KlReport(BaseModel):
    quadrature: float
    taylor_bound: float
    leading: float


class ExponentReport(BaseModel):
    f: float
    f0: float
    fprime0: float
    fsecond0: float
    mutual_information: float


class ThroughputPair(BaseModel):
    r: float = Field(description="Message throughput, nats per sqrt(second).")
    r_k: float = Field(description="Key throughput, nats per sqrt(second).")
    metric: Metric

    @property
    def r_bits(self) -> float:
        return nats_to_bits(self.r)

    @property
    def r_k_bits(self) -> float:
        return nats_to_bits(self.r_k)


class ConverseBound(BaseModel):
    limit: float
    metric: Metric


class LowPowerConstants(BaseModel):
    a_const: float = Field(description="Power constant A of the low-power sub-code.")
    nu: float
    quantile_argument: float
    fraction: float = Field(description="Lower bound gamma on |C_l| / |C|.")
    power_bound: float = Field(description="A * sqrt(n).")


class ExperimentConfig(BaseModel):
    """Everything a CLI run needs; written back as config.resolved.json."""
    model_config = ConfigDict(extra="forbid")

    name: str = "run"
    mask: SpectralMask | None = None
    mask_file: str | None = None
    metric: Metric = "tv"
    nw: float = Field(default=1.0, gt=0)
    nb: float = Field(default=1.0, gt=0)
    delta: float = Field(default=0.5, gt=0, lt=1)
    t: float | None = Field(default=None, gt=0, description="Total transmission time T in seconds.")
    n: int | None = Field(default=None, ge=3, description="Forces the blocklength instead of deriving it from T.")
    xi: float = Field(default=0.05, ge=0, lt=1)
    beta_grid: int = Field(default=101, ge=2)
    tol: float = Field(default=1e-7, gt=0)
    seed: int = Field(default=0, ge=0)
    trials: int = Field(default=2000, ge=1)
    rate_backoff: float = Field(default=0.8, gt=0)
    key_backoff: float = Field(default=1.0, gt=0)
    sim_m: int | None = Field(default=None, ge=1, description="Overrides the simulated message count.")
    sim_k: int | None = Field(default=None, ge=1, description="Overrides the simulated key count.")
    epsilon: float | None = Field(default=None, gt=0, lt=1, description="Rearrangement epsilon; default is the measured average error.")
    assertions: list[Literal["mask_fit", "concentration", "esd_preserved", "rearrangement_bound", "covertness", "reliability"]] = Field(
        default_factory=lambda: ["esd_preserved", "rearrangement_bound"])
    max_error: float = Field(default=0.05, gt=0, le=1)
    plots: bool = True
    output_dir: str | None = None

    @model_validator(mode="after")
    def _need_length(self) -> "ExperimentConfig":
        if self.t is None and self.n is None:
            raise ValueError("one of t or n is required")
        return self

    def resolved_mask(self) -> SpectralMask:
        if self.mask is not None:
            return self.mask
        if self.mask_file is not None:
            return SpectralMask.from_json_file(self.mask_file)
        raise ConfigError("no mask given (set mask or mask_file)", stage="config")

    @classmethod
    def from_dict(cls, data: dict, source: str = "config") -> "ExperimentConfig":
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise _config_error(source, e) from e

    @classmethod
    def from_json_file(cls, path: str | Path, overrides: dict | None = None) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {path}: {e}", stage="config") from e
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data, source=f"config file {path}")
