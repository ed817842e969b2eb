"""Comparison maps for the benchmark: a plain open-addressing hash map.

The ordered-map baseline is :class:`wormhole.oracle.ModelMap`.
"""
from __future__ import annotations

_EMPTY = object()
_TOMB = object()


class OpenHashMap:
    """Linear-probing hash map over Python lists; no ordering, no ranges."""

    def __init__(self, capacity: int = 16) -> None:
        cap = 16
        while cap < capacity:
            cap <<= 1
        self._keys = [_EMPTY] * cap
        self._vals = [None] * cap
        self._mask = cap - 1
        self._used = 0  # live + tombstones
        self._live = 0

    def __len__(self) -> int:
        return self._live

    def get(self, key):
        keys, mask = self._keys, self._mask
        i = hash(key) & mask
        while True:
            k = keys[i]
            if k is _EMPTY:
                return None
            if k == key:
                return self._vals[i]
            i = (i + 1) & mask

    def set(self, key, value) -> None:
        if (self._used + 1) * 4 > len(self._keys) * 3:
            self._grow()
        keys, mask = self._keys, self._mask
        i = hash(key) & mask
        tomb = -1
        while True:
            k = keys[i]
            if k is _EMPTY:
                break
            if k is _TOMB:
                if tomb < 0:
                    tomb = i
            elif k == key:
                self._vals[i] = value
                return
            i = (i + 1) & mask
        if tomb >= 0:
            i = tomb
        else:
            self._used += 1
        keys[i] = key
        self._vals[i] = value
        self._live += 1

    def delete(self, key) -> bool:
        keys, mask = self._keys, self._mask
        i = hash(key) & mask
        while True:
            k = keys[i]
            if k is _EMPTY:
                return False
            if k is not _TOMB and k == key:
                keys[i] = _TOMB
                self._vals[i] = None
                self._live -= 1
                return True
            i = (i + 1) & mask

    def range_ascending(self, start, count):
        raise NotImplementedError("hash map baseline has no ordered scans")

    def _grow(self) -> None:
        old = [(k, v) for k, v in zip(self._keys, self._vals) if k is not _EMPTY and k is not _TOMB]
        cap = len(self._keys) * 2
        self._keys = [_EMPTY] * cap
        self._vals = [None] * cap
        self._mask = cap - 1
        self._used = self._live = 0
        for k, v in old:
            self.set(k, v)
