"""Binary and CSV persistence for codebooks.

Binary layout (little-endian): magic b"CVTC", u16 version, u32 n, u64 M, u64 K,
f64 a_n, then the MK x n sign bits packed row-major with numpy.packbits.
"""

import logging
import struct
from pathlib import Path

import numpy as np

from covertlab.core.errors import CodebookFormatError
from covertlab.engines.scheme import Codebook
from covertlab.reporting.emitters import write_csv

logger = logging.getLogger(__name__)

MAGIC = b"CVTC"
VERSION = 1
_HEADER = struct.Struct("<4sHIQQd")


def write_codebook(cb: Codebook, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(MAGIC, VERSION, cb.n, cb.m, cb.k, cb.a_n)
    path.write_bytes(header + np.packbits(cb.signs, axis=None).tobytes())
    logger.info("wrote codebook %s (%d x %d)", path, cb.size, cb.n)
    return path


def read_codebook(path: str | Path) -> Codebook:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CodebookFormatError(f"cannot read codebook {path}: {e}", stage="codebook") from e
    if len(raw) < _HEADER.size:
        raise CodebookFormatError(f"{path}: truncated header", stage="codebook")
    magic, version, n, m, k, a_n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CodebookFormatError(f"{path}: bad magic {magic!r}", stage="codebook")
    if version != VERSION:
        raise CodebookFormatError(f"{path}: unsupported version {version}", stage="codebook")
    bits = m * k * n
    body = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size)
    if body.size != (bits + 7) // 8:
        raise CodebookFormatError(f"{path}: expected {(bits + 7) // 8} payload bytes, found {body.size}",
                                  stage="codebook")
    signs = np.unpackbits(body, count=bits).reshape(m * k, n)
    return Codebook(n=n, m=m, k=k, a_n=a_n, signs=signs)


def export_csv(cb: Codebook, path: str | Path) -> Path:
    """One row per codeword: m, s, then the n signs as +1/-1."""
    header = ["m", "s"] + [f"x{i}" for i in range(1, cb.n + 1)]
    signs = cb.sign_matrix()
    rows = ([row // cb.k + 1, row % cb.k + 1, *signs[row].tolist()] for row in range(cb.size))
    return write_csv(path, header, rows)
