"""Deterministic keyset generation and the binary keyset file format.

File layout: ``b"WHK1"``, version byte 0x01, key count (u64 LE), then for
each key a u32 LE length followed by the raw bytes.
"""
from __future__ import annotations

import math
import random
import struct
from dataclasses import dataclass
from pathlib import Path

MAGIC = b"WHK1"
VERSION = 1
STYLES = ("random", "padded", "composite")


class KeysetError(ValueError):
    pass


@dataclass(frozen=True)
class KeysetSpec:
    style: str = "random"
    key_len: int = 8
    count: int = 1_000_000
    seed: int = 1

    def validate(self) -> None:
        if self.style not in STYLES:
            raise KeysetError(f"unknown keyset style {self.style!r}")
        if self.count < 0:
            raise KeysetError("count must be non-negative")
        if self.key_len < 0:
            raise KeysetError("key length must be non-negative")
        if self.style == "padded" and self.key_len < 4:
            raise KeysetError("padded keys need at least 4 bytes")
        if self.style == "composite" and self.key_len < 3:
            raise KeysetError("composite keys need at least 3 bytes")


def _distinct(draw, count: int, capacity: int) -> list[bytes]:
    if count > capacity:
        raise KeysetError(f"cannot produce {count} distinct keys; only {capacity} possible")
    seen: set[bytes] = set()
    out: list[bytes] = []
    misses = 0
    while len(out) < count:
        k = draw()
        if k in seen:
            misses += 1
            if misses > 64 + 4 * count:
                raise KeysetError(f"duplicate exhaustion after {len(out)} distinct keys")
            continue
        seen.add(k)
        out.append(k)
    return out


def generate_keys(spec: KeysetSpec) -> list[bytes]:
    spec.validate()
    rng = random.Random(spec.seed)
    n, L = spec.count, spec.key_len
    if spec.style == "random":
        return _distinct(lambda: rng.randbytes(L), n, 256 ** L)
    if spec.style == "padded":
        pad = b"0" * (L - 4)
        return _distinct(lambda: pad + rng.randbytes(4), n, 256 ** 4)
    # composite: three fixed-width fields, each drawn from a small vocabulary
    # so that keys share field-level prefixes like joined record ids
    widths = (L // 3, L // 3, L - 2 * (L // 3))
    vocab_size = max(2, 2 * math.ceil(max(n, 1) ** (1 / 3)))
    vocabs = []
    for w in widths:
        words = _distinct(lambda w=w: rng.randbytes(w), min(vocab_size, 256 ** w), 256 ** w)
        vocabs.append(words)
    capacity = math.prod(len(v) for v in vocabs)
    a, b, c = vocabs
    return _distinct(lambda: rng.choice(a) + rng.choice(b) + rng.choice(c), n, capacity)


def encode_keyset(keys: list[bytes]) -> bytes:
    parts = [MAGIC, bytes([VERSION]), struct.pack("<Q", len(keys))]
    pack = struct.Struct("<I").pack
    for k in keys:
        parts.append(pack(len(k)))
        parts.append(k)
    return b"".join(parts)


def decode_keyset(data: bytes) -> list[bytes]:
    if len(data) < 13:
        raise KeysetError("keyset header truncated")
    if data[:4] != MAGIC:
        raise KeysetError(f"bad magic {data[:4]!r}")
    if data[4] != VERSION:
        raise KeysetError(f"unsupported keyset version {data[4]}")
    (count,) = struct.unpack_from("<Q", data, 5)
    keys: list[bytes] = []
    pos, end = 13, len(data)
    unpack = struct.Struct("<I").unpack_from
    for i in range(count):
        if pos + 4 > end:
            raise KeysetError(f"record {i}: truncated length field")
        (klen,) = unpack(data, pos)
        pos += 4
        if pos + klen > end:
            raise KeysetError(f"record {i}: length {klen} exceeds remaining {end - pos} bytes")
        keys.append(data[pos:pos + klen])
        pos += klen
    if pos != end:
        raise KeysetError(f"{end - pos} trailing bytes after {count} records")
    return keys


def write_keyset(path, keys: list[bytes]) -> None:
    Path(path).write_bytes(encode_keyset(keys))


def load_keyset(path) -> list[bytes]:
    return decode_keyset(Path(path).read_bytes())


def generate_keyset(spec: KeysetSpec, path) -> list[bytes]:
    keys = generate_keys(spec)
    write_keyset(path, keys)
    return keys
