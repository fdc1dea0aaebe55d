"""CSV, JSON and SVG emission plus run-directory management.

Figures are pure formatting over the same rows that go to CSV; nothing numeric is
computed here.
"""

import csv
import datetime
import json
import logging
import math
from collections.abc import Iterable, Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from pydantic import BaseModel  # noqa: E402

from covertlab.core.config import COVERT_RUNS_DIR  # noqa: E402

logger = logging.getLogger(__name__)

# fixed salt so SVG element ids do not change between identical runs
plt.rcParams["svg.hashsalt"] = "covertlab"


def make_run_dir(name: str, base: str | Path | None = None) -> Path:
    timestamp = datetime.datetime.now().strftime("%Y%m%d_%H%M%S_%f")
    run_dir = Path(base or COVERT_RUNS_DIR) / f"{name}_{timestamp}"
    run_dir.mkdir(parents=True, exist_ok=False)
    return run_dir


def to_jsonable(value):
    """Pydantic models, numpy scalars/arrays and non-finite floats into RFC 8259 JSON values."""
    if isinstance(value, BaseModel):
        return to_jsonable(value.model_dump(by_alias=True))
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        return to_jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path: str | Path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_jsonable(data), indent=4, allow_nan=False) + "\n")
    return path


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    logger.debug("wrote %s", path)
    return path


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_rrc(t: np.ndarray, f: np.ndarray, curves: dict[float, tuple[np.ndarray, np.ndarray]],
             path: str | Path, t0: float) -> Path:
    """Time pulses (left) and spectra (right), one line per roll-off."""
    fig, (ax_t, ax_f) = plt.subplots(1, 2, figsize=(10, 4))
    for beta, (phi, phi_hat) in curves.items():
        ax_t.plot(t, phi, label=f"beta={beta:g}")
        ax_f.plot(f, phi_hat, label=f"beta={beta:g}")
    ax_t.set_xlabel("t (s)")
    ax_t.set_ylabel("phi(t)")
    ax_t.set_title(f"RRC pulse, T0={t0:g}")
    ax_f.set_xlabel("f (Hz)")
    ax_f.set_ylabel("phi_hat(f)")
    ax_f.set_title("Spectrum")
    for ax in (ax_t, ax_f):
        ax.grid(True, alpha=0.3)
        ax.legend()
    return _save(fig, path)


def plot_esd(f: np.ndarray, series: dict[str, np.ndarray], path: str | Path,
             thresholds: Sequence[tuple[float, float]] = ()) -> Path:
    """ESD curves in dB relative to their common peak; thresholds are (band edge, level) pairs."""
    fig, ax = plt.subplots(figsize=(7, 4))
    peak = max(float(np.max(v)) for v in series.values())
    for label, values in series.items():
        ax.plot(f, 10.0 * np.log10(np.maximum(values, peak * 1e-30) / peak), label=label)
    for edge, level in thresholds:
        ax.hlines(10.0 * math.log10(level / peak), edge, f[-1], colors="k", linestyles="--", linewidth=0.8)
        ax.axvline(edge, color="k", linestyle=":", linewidth=0.8)
    ax.set_xlabel("f (Hz)")
    ax.set_ylabel("ESD (dB re peak)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_xy(x: Sequence[float], series: dict[str, Sequence[float]], path: str | Path, xlabel: str,
            ylabel: str, logx: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, y in series.items():
        ax.plot(x, y, marker="o", label=label)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend()
    return _save(fig, path)
