"""Reference ordered map, op traces and structural checks for the index."""
from __future__ import annotations

import random
import struct
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path

from .keys import crc32c
from .leaf import LeafNode

GET, SET, DEL, RANGE = b"G", b"S", b"D", b"R"


class ModelMap:
    """Sorted-array ordered map (bisect over a key list)."""

    def __init__(self) -> None:
        self.keys: list[bytes] = []
        self.values: list = []

    def __len__(self) -> int:
        return len(self.keys)

    def get(self, key: bytes):
        i = bisect_left(self.keys, key)
        if i < len(self.keys) and self.keys[i] == key:
            return self.values[i]
        return None

    def set(self, key: bytes, value) -> None:
        i = bisect_left(self.keys, key)
        if i < len(self.keys) and self.keys[i] == key:
            self.values[i] = value
        else:
            self.keys.insert(i, key)
            self.values.insert(i, value)

    def delete(self, key: bytes) -> bool:
        i = bisect_left(self.keys, key)
        if i < len(self.keys) and self.keys[i] == key:
            del self.keys[i]
            del self.values[i]
            return True
        return False

    def range_ascending(self, start: bytes, count: int) -> list[tuple[bytes, object]]:
        if count <= 0:
            return []
        i = bisect_left(self.keys, start)
        return list(zip(self.keys[i:i + count], self.values[i:i + count]))

    def items(self) -> list[tuple[bytes, object]]:
        return list(zip(self.keys, self.values))

    @classmethod
    def from_sorted(cls, pairs) -> ModelMap:
        m = cls()
        for k, v in pairs:
            m.keys.append(k)
            m.values.append(v)
        return m


def model_apply(model, op: tuple):
    """Apply one trace op to anything with the index API and return its result."""
    code, key, value, count = op
    if code == GET:
        return model.get(key)
    if code == SET:
        model.set(key, value)
        return None
    if code == DEL:
        return model.delete(key)
    if code == RANGE:
        return model.range_ascending(key, count)
    raise ValueError(f"unknown opcode {code!r}")


# -- key generators ---------------------------------------------------------

def uniform_keys(rng: random.Random, n: int, length: int = 8) -> list[bytes]:
    return [rng.randbytes(length) for _ in range(n)]


def shared_prefix_keys(rng: random.Random, n: int, prefix_len: int = 60,
                       tail: int = 4) -> list[bytes]:
    """URL-like keys: a handful of long common prefixes plus a short tail."""
    roots = [rng.randbytes(prefix_len) for _ in range(3)]
    return [rng.choice(roots) + rng.randbytes(tail) for _ in range(n)]


def zero_suffix_keys(n: int, stem: bytes = b"\x01") -> list[bytes]:
    """``stem`` followed by 0..n-1 zero bytes: keys no split can separate."""
    return [stem + b"\0" * z for z in range(n)]


def mixed_binary_keys(rng: random.Random, n: int) -> list[bytes]:
    """Short keys over a tiny alphabet so zeros, prefixes and the empty key
    all show up."""
    out = [b""]
    while len(out) < n:
        out.append(bytes(rng.choice((0, 0, 1, 2, 255)) for _ in range(rng.randint(0, 6))))
    return out


# -- traces -----------------------------------------------------------------

@dataclass
class OpTrace:
    seed: int
    ops: list[tuple[bytes, bytes, bytes | None, int]] = field(default_factory=list)

    @classmethod
    def generate(cls, seed: int, n: int, pool: list[bytes],
                 mix=(40, 40, 10, 10), range_len: int = 100) -> OpTrace:
        """``mix`` is the GET/SET/DEL/RANGE percentage split."""
        if sum(mix) != 100:
            raise ValueError("op mix must sum to 100")
        rng = random.Random(seed)
        codes = rng.choices((GET, SET, DEL, RANGE), weights=mix, k=n)
        ops = []
        for i, code in enumerate(codes):
            key = pool[rng.randrange(len(pool))]
            if code == SET:
                ops.append((code, key, i.to_bytes(8, "little"), 0))
            elif code == RANGE:
                ops.append((code, key, None, rng.randint(0, range_len)))
            else:
                ops.append((code, key, None, 0))
        return cls(seed, ops)

    def to_bytes(self) -> bytes:
        out = bytearray()
        for code, key, value, count in self.ops:
            out += code
            out += struct.pack("<I", len(key))
            out += key
            if code == SET:
                out += struct.pack("<I", len(value))
                out += value
            elif code == RANGE:
                out += struct.pack("<I", count)
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes, seed: int = 0) -> OpTrace:
        ops = []
        pos = 0
        n = len(data)

        def take(k: int, what: str) -> bytes:
            nonlocal pos
            if pos + k > n:
                raise ValueError(f"trace record {len(ops)}: truncated {what}")
            chunk = data[pos:pos + k]
            pos += k
            return chunk

        while pos < n:
            code = take(1, "opcode")
            if code not in (GET, SET, DEL, RANGE):
                raise ValueError(f"trace record {len(ops)}: bad opcode {code!r}")
            (klen,) = struct.unpack("<I", take(4, "key length"))
            key = take(klen, "key")
            value, count = None, 0
            if code == SET:
                (vlen,) = struct.unpack("<I", take(4, "value length"))
                value = take(vlen, "value")
            elif code == RANGE:
                (count,) = struct.unpack("<I", take(4, "count"))
            ops.append((code, key, value, count))
        return cls(seed, ops)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> OpTrace:
        return cls.from_bytes(Path(path).read_bytes())


# -- structural oracles ------------------------------------------------------

def brute_target_node(head: LeafNode, key: bytes) -> LeafNode:
    """Last leaf on the list whose anchor base is <= ``key``."""
    target = head
    leaf = head.right
    while leaf is not None and leaf.base <= key:
        target = leaf
        leaf = leaf.right
    return target


def _prefix_oracle(leaves: list[LeafNode]):
    """Every trie prefix with its expected kind/children/extremes, derived
    from the stored anchors alone."""
    want: dict[bytes, dict] = {}
    for leaf in leaves:
        a = leaf.anchor
        want[a] = {"leaf": leaf}
    for leaf in leaves:
        a = leaf.anchor
        for plen in range(len(a)):
            p = a[:plen]
            node = want.setdefault(p, {"children": set(), "first": leaf, "last": leaf})
            if "leaf" in node:
                continue  # prefix-condition violation, reported separately
            node["children"].add(a[plen])
            node["last"] = leaf
    return want


def check_invariants(index, exhaustive_pairs: int = 2000) -> list[str]:
    """Full structural scan; returns human-readable violations (empty = ok)."""
    errs: list[str] = []
    cfg = index.config
    leaves = list(index.leaves())
    if leaves[0].left is not None:
        errs.append("head has a left neighbour")
    if leaves[0].base != b"":
        errs.append(f"head base {leaves[0].base!r} is not empty")
    prev_key = None
    for n, leaf in enumerate(leaves):
        nxt = leaves[n + 1] if n + 1 < len(leaves) else None
        if nxt is not None and nxt.left is not leaf:
            errs.append(f"leaf {n}: right.left mismatch")
        if leaf.anchor[:len(leaf.base)] != leaf.base or leaf.anchor[len(leaf.base):].strip(b"\0"):
            errs.append(f"leaf {n}: anchor {leaf.anchor!r} is not base {leaf.base!r} plus zeros")
        items = leaf.items
        if not (len(items) == len(leaf.tags) == len(leaf.hitems)):
            errs.append(f"leaf {n}: array sizes differ")
        if {id(x) for x in items} != {id(x) for x in leaf.hitems}:
            errs.append(f"leaf {n}: key array and tag array hold different items")
        if any(leaf.tags[j] > leaf.tags[j + 1] for j in range(len(leaf.tags) - 1)):
            errs.append(f"leaf {n}: tags not ascending")
        if any(t != it.tag or it.tag != crc32c(it.key) & 0xFFFF
               for t, it in zip(leaf.tags, leaf.hitems)):
            errs.append(f"leaf {n}: stale tag")
        ns = leaf.nsorted
        if any(items[j].key >= items[j + 1].key for j in range(ns - 1)):
            errs.append(f"leaf {n}: sorted prefix out of order")
        if len(items) > cfg.max_leaf_size and not leaf.fat:
            errs.append(f"leaf {n}: over capacity without fat flag")
        keys = sorted(it.key for it in items)
        if keys:
            if keys[0] < leaf.base:
                errs.append(f"leaf {n}: key {keys[0]!r} below anchor base {leaf.base!r}")
            if nxt is not None and keys[-1] >= nxt.base:
                errs.append(f"leaf {n}: key {keys[-1]!r} not below next base {nxt.base!r}")
            if prev_key is not None and keys[0] <= prev_key:
                errs.append(f"leaf {n}: keys overlap previous leaf")
            prev_key = keys[-1]
        if nxt is not None:
            if not leaf.base < nxt.base:
                errs.append(f"leaf {n}: bases not increasing ({leaf.base!r}, {nxt.base!r})")
            if not leaf.anchor < nxt.anchor:
                errs.append(f"leaf {n}: stored anchors not increasing")
        if len(leaf.anchor) > index.max_anchor_len:
            errs.append(f"leaf {n}: anchor longer than max_anchor_len")

    anchors = [leaf.anchor for leaf in leaves]
    if len(anchors) <= exhaustive_pairs:
        for a in anchors:
            for b in anchors:
                if a is not b and len(a) < len(b) and b.startswith(a):
                    errs.append(f"anchor {a!r} is a prefix of {b!r}")
    else:
        srt = sorted(anchors)
        for a, b in zip(srt, srt[1:]):
            if b.startswith(a):
                errs.append(f"anchor {a!r} is a prefix of {b!r}")

    tables = [index.table]
    if index.thread_safe:
        tables.append(index.meta.mirror)
    want = _prefix_oracle(leaves)
    for t, table in enumerate(tables):
        name = "table" if t == 0 else "mirror"
        have = {}
        count = 0
        for head in table.slots:
            slot = head
            while slot is not None:
                if len(slot.tags) > 8:
                    errs.append(f"{name}: slot with {len(slot.tags)} entries")
                for tag, it in zip(slot.tags, slot.items):
                    count += 1
                    if it.hash != crc32c(it.prefix) or tag != it.hash & 0xFFFF:
                        errs.append(f"{name}: bad hash/tag for {it.prefix!r}")
                    have[it.prefix] = it
                slot = slot.overflow
        if count != table.count or len(have) != count:
            errs.append(f"{name}: item count {table.count} vs {count} stored, {len(have)} distinct")
        for p in have.keys() - want.keys():
            errs.append(f"{name}: stray item {p!r}")
        for p in want.keys() - have.keys():
            errs.append(f"{name}: missing item {p!r} (prefix closure)")
        for p, w in want.items():
            it = have.get(p)
            if it is None:
                continue
            if "leaf" in w:
                if it.leaf is not w["leaf"]:
                    errs.append(f"{name}: {p!r} should be a LEAF item for its anchor")
                continue
            if it.leaf is not None:
                errs.append(f"{name}: {p!r} should be INTERNAL")
                continue
            bits = set(it.children())
            if bits != w["children"]:
                errs.append(f"{name}: bitmap of {p!r} is {sorted(bits)}, want {sorted(w['children'])}")
            if it.leftmost is not w["first"] or it.rightmost is not w["last"]:
                errs.append(f"{name}: extreme leaves of {p!r} are wrong")
    if index.thread_safe and tables[0].dump() != tables[1].dump():
        errs.append("published table and mirror differ")
    return errs


@dataclass
class DiffReport:
    ok: bool
    ops: int
    op_index: int = -1
    op: tuple | None = None
    expected: object = None
    actual: object = None
    violations: list[str] = field(default_factory=list)
    checks: int = 0

    def __str__(self) -> str:
        if self.ok:
            return f"ok: {self.ops} ops, {self.checks} structural scans"
        if self.violations:
            return f"op {self.op_index}: invariant violations: {self.violations[:5]}"
        return f"op {self.op_index} {self.op!r}: expected {self.expected!r}, got {self.actual!r}"


def differential_run(trace: OpTrace, index, model: ModelMap | None = None,
                     check_every: int = 256) -> DiffReport:
    """Replay ``trace`` on ``index`` and the model; stop at the first
    divergence.  ``check_every=0`` disables structural scans."""
    model = ModelMap() if model is None else model
    checks = 0
    for n, op in enumerate(trace.ops):
        want = model_apply(model, op)
        got = model_apply(index, op)
        if got != want:
            return DiffReport(False, n + 1, n, op, want, got, checks=checks)
        if check_every and (n + 1) % check_every == 0:
            checks += 1
            errs = check_invariants(index)
            if errs:
                return DiffReport(False, n + 1, n, op, violations=errs, checks=checks)
    final = index.range_ascending(b"", len(model) + 1)
    if final != model.items():
        return DiffReport(False, len(trace.ops), len(trace.ops), None,
                          "full scan equal to model", "mismatch", checks=checks)
    return DiffReport(True, len(trace.ops), checks=checks)
