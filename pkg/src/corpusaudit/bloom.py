"""Bloom filter membership baseline.

A bit-array sketch sized from the standard formulas, answering only
"possibly present / definitely absent".  It stores no positions,
frequencies, or document attribution, which is exactly the capability
gap this baseline exists to demonstrate against the full index.
"""

from __future__ import annotations

import math
import struct
import warnings
from pathlib import Path

__all__ = [
    "BloomFilter",
    "CapacityExceededWarning",
    "sizing_for",
    "build_filter",
    "maybe_contains",
    "load_filter",
]

_MAGIC = b"CABF"
_VERSION = 1


class CapacityExceededWarning(UserWarning):
    """More terms inserted than the filter was sized for; the configured
    false-positive rate no longer holds."""


def sizing_for(capacity: int, fp_rate: float) -> tuple[int, int]:
    """Optimal (bit count m, hash count k) for n items at rate p."""
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    if not 0.0 < fp_rate < 1.0:
        raise ValueError("fp_rate must be in (0, 1)")
    ln2 = math.log(2.0)
    m = math.ceil(-capacity * math.log(fp_rate) / (ln2 * ln2))
    k = round((m / capacity) * ln2)
    return m, max(1, k)


def _hash_pair(term: str) -> tuple[int, int]:
    import hashlib

    d = hashlib.blake2b(term.encode("utf-8"), digest_size=16).digest()
    h1 = int.from_bytes(d[:8], "little")
    h2 = int.from_bytes(d[8:], "little") | 1
    return h1, h2


class BloomFilter:
    """Fixed-size bit array with k simulated hash functions.

    The k indexes come from double hashing (h1 + i*h2 mod m) over a
    16-byte keyed digest split in half; h2 is forced odd so the probe
    sequence cannot collapse.
    """

    def __init__(self, capacity: int, fp_rate: float):
        self.capacity = capacity
        self.target_fp_rate = fp_rate
        self.m, self.k = sizing_for(capacity, fp_rate)
        self.bits = bytearray((self.m + 7) // 8)
        self.n_inserted = 0
        self._warned = False

    def add(self, term: str) -> None:
        h1, h2 = _hash_pair(term)
        m = self.m
        bits = self.bits
        for i in range(self.k):
            j = (h1 + i * h2) % m
            bits[j >> 3] |= 1 << (j & 7)
        self.n_inserted += 1
        if self.n_inserted > self.capacity and not self._warned:
            self._warned = True
            warnings.warn(
                f"inserted {self.n_inserted} terms into a filter sized for "
                f"{self.capacity}; false-positive rate guarantee void",
                CapacityExceededWarning,
                stacklevel=2,
            )

    def __contains__(self, term: str) -> bool:
        h1, h2 = _hash_pair(term)
        m = self.m
        bits = self.bits
        for i in range(self.k):
            j = (h1 + i * h2) % m
            if not bits[j >> 3] & (1 << (j & 7)):
                return False
        return True

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as f:
            f.write(_MAGIC + struct.pack("<HH", _VERSION, 0))
            f.write(
                struct.pack(
                    "<QIQQd",
                    self.m,
                    self.k,
                    self.n_inserted,
                    self.capacity,
                    self.target_fp_rate,
                )
            )
            f.write(bytes(self.bits))

    @staticmethod
    def load(path: str | Path) -> "BloomFilter":
        data = Path(path).read_bytes()
        if data[:4] != _MAGIC:
            raise ValueError(f"not a filter file: {path}")
        m, k, n, cap, rate = struct.unpack_from("<QIQQd", data, 8)
        f = BloomFilter.__new__(BloomFilter)
        f.capacity = cap
        f.target_fp_rate = rate
        f.m = m
        f.k = k
        f.n_inserted = n
        f._warned = n > cap
        f.bits = bytearray(data[8 + struct.calcsize("<QIQQd") :])
        if len(f.bits) != (m + 7) // 8:
            raise ValueError(f"truncated filter file: {path}")
        return f


def build_filter(terms, capacity: int, fp_rate: float) -> BloomFilter:
    """Insert every term from the iterator into a fresh filter."""
    f = BloomFilter(capacity, fp_rate)
    for t in terms:
        f.add(t)
    return f


def maybe_contains(f: BloomFilter, term: str) -> bool:
    """True for every inserted term; False means definitely absent."""
    return term in f


def load_filter(path: str | Path) -> BloomFilter:
    return BloomFilter.load(path)
