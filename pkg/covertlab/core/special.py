import numpy as np
from numpy.typing import ArrayLike
from scipy import special

from covertlab.core.errors import QuantileDomain

LN2 = float(np.log(2.0))


def q_func(x: ArrayLike) -> np.ndarray | float:
    """Gaussian tail probability Q(x) = P(N(0,1) > x)."""
    out = special.ndtr(-np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def q_inv(p: ArrayLike) -> np.ndarray | float:
    """Inverse of Q on (0, 1); raises QuantileDomain outside it."""
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise QuantileDomain(f"Q^-1 argument must lie in (0, 1), got {p}")
    out = -special.ndtri(arr)
    return float(out) if np.ndim(out) == 0 else out


def log_cosh(x: ArrayLike) -> np.ndarray:
    """log(cosh(x)) without overflow for large |x|."""
    ax = np.abs(np.asarray(x, dtype=float))
    return ax + np.log1p(np.exp(-2.0 * ax)) - LN2


def nats_to_bits(value: float) -> float:
    return value / LN2
