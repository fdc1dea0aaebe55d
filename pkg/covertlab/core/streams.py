"""Counter-based random streams.

Each stream is a Philox generator whose key is derived from the run seed and a
domain tag, and whose counter is set from the stream indices. Any (domain,
index) stream can therefore be regenerated in isolation, on any worker, in any
order, with bit-identical output.
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _domain_key(domain: str) -> int:
    return zlib.crc32(domain.encode("utf-8")) & 0xFFFFFFFF


def stream(seed: int, domain: str, *indices: int) -> np.random.Generator:
    """Generator for stream ``(seed, domain, *indices)``; at most three indices."""
    if len(indices) > 3:
        raise ValueError("at most three stream indices are supported")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = np.array([seed & _MASK64, _domain_key(domain)], dtype=np.uint64)
    counter = np.zeros(4, dtype=np.uint64)
    for slot, index in enumerate(indices, start=1):
        if index < 0:
            raise ValueError(f"stream indices must be non-negative, got {indices}")
        counter[slot] = index
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def sign_bits(seed: int, domain: str, row: int, n: int) -> np.ndarray:
    """Fair bits for one codebook row; column j is bit j of the row stream."""
    words = np.asarray(stream(seed, domain, row).bit_generator.random_raw((n + 63) // 64), dtype=np.uint64)
    bits = (words[:, None] >> np.arange(64, dtype=np.uint64)) & np.uint64(1)
    return bits.reshape(-1)[:n].astype(np.uint8)


def gaussian(seed: int, domain: str, trial: int, size: int, scale: float = 1.0, bank: int = 0) -> np.ndarray:
    return stream(seed, domain, bank, trial).normal(0.0, scale, size=size)
