import logging
import os

from dotenv import load_dotenv

from covertlab.core.errors import ConfigError

load_dotenv()


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        value = int(raw)
    except ValueError as e:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from e
    if value < 1:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


def _float_env(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        value = float(raw)
    except ValueError as e:
        raise ConfigError(f"{name} must be a number, got {raw!r}") from e
    if not value > 0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


COVERT_THREADS = _int_env("COVERT_THREADS", os.cpu_count() or 1)
COVERT_LOG_LEVEL = os.getenv("COVERT_LOG_LEVEL", "INFO").upper()
COVERT_RUNS_DIR = os.getenv("COVERT_RUNS_DIR", "runs")
COVERT_QUAD_TOL = _float_env("COVERT_QUAD_TOL", 1e-10)
COVERT_BISECT_TOL = _float_env("COVERT_BISECT_TOL", 1e-7)
# likelihood evaluations per sample before codebook-aware detectors subsample
COVERT_MC_BUDGET = _int_env("COVERT_MC_BUDGET", 2**16)

if not isinstance(logging.getLevelName(COVERT_LOG_LEVEL), int):
    raise ConfigError(f"COVERT_LOG_LEVEL is not a logging level: {COVERT_LOG_LEVEL!r}")

logging.basicConfig(level=COVERT_LOG_LEVEL, format='%(asctime)s - %(levelname)s - %(message)s')
