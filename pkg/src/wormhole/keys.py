"""Keys, CRC-32c hashing and tags.

Prefix hashes are computed incrementally: a :class:`HashState` for a prefix
can be extended with more bytes without re-reading the prefix.
"""
from __future__ import annotations

try:
    from crc32c import crc32c as _crc32c_ext
except ImportError:  # pragma: no cover - exercised only without the wheel
    _crc32c_ext = None

_POLY = 0x82F63B78  # reflected Castagnoli polynomial


def _make_table() -> list[int]:
    table = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ _POLY if c & 1 else c >> 1
        table.append(c)
    return table


_TABLE = _make_table()


def crc32c_py(data: bytes, value: int = 0) -> int:
    """Table-driven CRC-32c; ``value`` continues a previous checksum."""
    c = value ^ 0xFFFFFFFF
    tbl = _TABLE
    for b in data:
        c = tbl[(c ^ b) & 0xFF] ^ (c >> 8)
    return c ^ 0xFFFFFFFF


crc32c = _crc32c_ext if _crc32c_ext is not None else crc32c_py


class FoldCounter:
    """Counts bytes folded into hash states (instrumentation only)."""

    __slots__ = ("bytes",)

    def __init__(self) -> None:
        self.bytes = 0


def compute_hash(data: bytes) -> int:
    return crc32c(data)


def tag_of(hash32: int) -> int:
    return hash32 & 0xFFFF


class HashState:
    """Running CRC-32c over a prefix: ``state`` is the checksum of the first
    ``consumed`` bytes, so finalizing is the identity."""

    __slots__ = ("state", "consumed")

    def __init__(self, state: int = 0, consumed: int = 0) -> None:
        self.state = state
        self.consumed = consumed

    def finalize(self) -> int:
        return self.state

    def __repr__(self) -> str:
        return f"HashState(state=0x{self.state:08x}, consumed={self.consumed})"


def extend_hash(st: HashState, suffix: bytes, counter: FoldCounter | None = None) -> HashState:
    if counter is not None:
        counter.bytes += len(suffix)
    return HashState(crc32c(suffix, st.state), st.consumed + len(suffix))


def common_prefix_len(a: bytes, b: bytes) -> int:
    n = min(len(a), len(b))
    if a[:n] == b[:n]:
        return n
    lo, hi = 0, n  # a[:lo] == b[:lo], a[:hi] != b[:hi]
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if a[:mid] == b[:mid]:
            lo = mid
        else:
            hi = mid
    return lo


class KeyRef:
    """An immutable key plus its lazily computed hash.

    The lookup path records the longest prefix whose hash it has already
    computed (``known_len``/``known_crc``); ``hash32`` then only folds the
    remaining suffix.
    """

    __slots__ = ("key", "known_len", "known_crc", "folded", "_hash")

    def __init__(self, key: bytes) -> None:
        self.key = key
        self.known_len = 0
        self.known_crc = 0
        self.folded = 0  # bytes fed to the hash function on behalf of this key
        self._hash = -1

    @property
    def hash32(self) -> int:
        if self._hash < 0:
            known = self.known_len
            self.folded += len(self.key) - known
            self._hash = crc32c(self.key[known:], self.known_crc)
        return self._hash

    @property
    def tag16(self) -> int:
        return self.hash32 & 0xFFFF

    def __len__(self) -> int:
        return len(self.key)

    def __repr__(self) -> str:
        return f"KeyRef({self.key!r})"
