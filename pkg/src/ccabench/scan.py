"""Substring scan for leaked secret bytes in normal-world readable memory.

Any window of ``window`` bytes taken from the secret contains at least one
aligned chunk of ``window // 2`` bytes. The secret's aligned chunks are
indexed by their first eight bytes; every offset of every region is looked
up with numpy, and the few candidates are confirmed by extending the match
in both directions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

KEY = 8


@dataclass(frozen=True)
class Leak:
    region: int      # index into the scanned regions
    offset: int      # start of the match inside the region
    secret_offset: int
    length: int


def _keys_at_every_offset(buf: bytes) -> tuple[np.ndarray, np.ndarray]:
    """(positions, u64 keys) for every offset with KEY bytes available."""
    n = len(buf) - KEY + 1
    if n <= 0:
        return np.empty(0, np.int64), np.empty(0, np.uint64)
    pos, keys = [], []
    for shift in range(KEY):
        count = (len(buf) - shift) // KEY
        if count <= 0:
            continue
        arr = np.frombuffer(buf, dtype="<u8", count=count, offset=shift)
        pos.append(shift + KEY * np.arange(count, dtype=np.int64))
        keys.append(arr)
    return np.concatenate(pos), np.concatenate(keys)


class SecretIndex:
    def __init__(self, secret: bytes, window: int = 64):
        if window < 2 * KEY:
            raise ValueError(f"window must be at least {2 * KEY} bytes")
        self.secret = bytes(secret)
        self.window = window
        self.chunk = window // 2
        self._by_key: dict[int, list[int]] = {}
        usable = len(self.secret) - self.chunk + 1
        for off in range(0, max(usable, 0), self.chunk):
            key = int.from_bytes(self.secret[off:off + KEY], "little")
            self._by_key.setdefault(key, []).append(off)
        self._keys = np.sort(np.fromiter(self._by_key, dtype=np.uint64, count=len(self._by_key)))

    def scan(self, region: bytes, region_index: int = 0) -> list[Leak]:
        region = bytes(region)
        if len(region) < self.window or not len(self._keys):
            return []
        pos, keys = _keys_at_every_offset(region)
        idx = np.searchsorted(self._keys, keys)
        np.minimum(idx, len(self._keys) - 1, out=idx)
        hits = pos[self._keys[idx] == keys]
        found: dict[tuple[int, int], Leak] = {}
        covered: dict[int, int] = {}  # diagonal (p - s) -> end of the last match on it
        for p in np.sort(hits).tolist():
            key = int.from_bytes(region[p:p + KEY], "little")
            for s in self._by_key.get(key, ()):
                if p < covered.get(p - s, -1):
                    continue
                if region[p:p + self.chunk] != self.secret[s:s + self.chunk]:
                    continue
                left = 0
                while p - left > 0 and s - left > 0 and region[p - left - 1] == self.secret[s - left - 1]:
                    left += 1
                right = self.chunk
                while (p + right < len(region) and s + right < len(self.secret)
                       and region[p + right] == self.secret[s + right]):
                    right += 1
                length = left + right
                covered[p - s] = p + right
                if length >= self.window:
                    leak = Leak(region_index, p - left, s - left, length)
                    found[(leak.offset, leak.secret_offset)] = leak
        return sorted(found.values(), key=lambda l: (l.offset, l.secret_offset))


def find_leaks(secret: bytes, regions: Iterable[bytes], window: int = 64) -> list[Leak]:
    """All maximal matches of at least ``window`` bytes of ``secret`` inside ``regions``."""
    index = SecretIndex(secret, window)
    leaks: list[Leak] = []
    for i, region in enumerate(regions):
        leaks.extend(index.scan(region, i))
    return leaks


def scan_secrets(secrets: Sequence[bytes], regions: Sequence[bytes], window: int = 64) -> list[Leak]:
    out = []
    for secret in secrets:
        out.extend(find_leaks(secret, regions, window))
    return out


def naive_contains_window(secret: bytes, region: bytes, window: int = 64) -> bool:
    """Reference check, quadratic; for tests on small inputs."""
    return any(secret[i:i + window] in region for i in range(0, len(secret) - window + 1))
