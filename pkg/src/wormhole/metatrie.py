"""MetaTrieHT: the anchor trie stored as a hash table of prefixes.

Every anchor and every prefix of an anchor has one item in the table.  Items
for anchors point at their leaf; the others carry a 256-bit child bitmap and
the left-most/right-most leaf of their subtree.  Slots hold up to eight
``(tag, item)`` entries and chain into overflow slots when full.
"""
from __future__ import annotations

import logging

from .keys import KeyRef, crc32c
from .leaf import LeafNode

log = logging.getLogger(__name__)

SLOT_WIDTH = 8
MAX_LOAD = 0.75

LEAF = "LEAF"
INTERNAL = "INTERNAL"


class TrieItem:
    __slots__ = ("prefix", "hash", "leaf", "bitmap", "leftmost", "rightmost")

    def __init__(self, prefix: bytes, hash32: int, leaf: LeafNode | None = None,
                 bitmap: int = 0, leftmost: LeafNode | None = None,
                 rightmost: LeafNode | None = None) -> None:
        self.prefix = prefix
        self.hash = hash32
        self.leaf = leaf
        self.bitmap = bitmap
        self.leftmost = leftmost
        self.rightmost = rightmost

    @property
    def kind(self) -> str:
        return LEAF if self.leaf is not None else INTERNAL

    def copy(self) -> TrieItem:
        return TrieItem(self.prefix, self.hash, self.leaf, self.bitmap,
                        self.leftmost, self.rightmost)

    def children(self) -> list[int]:
        bm, out = self.bitmap, []
        while bm:
            low = bm & -bm
            out.append(low.bit_length() - 1)
            bm ^= low
        return out

    def dump(self) -> tuple:
        """Identity-free description used to compare two tables."""
        if self.leaf is not None:
            return (self.prefix, LEAF, id(self.leaf))
        return (self.prefix, INTERNAL, self.bitmap, id(self.leftmost), id(self.rightmost))

    def __repr__(self) -> str:
        if self.leaf is not None:
            return f"<LEAF {self.prefix!r}>"
        return f"<INTERNAL {self.prefix!r} children={bytes(self.children())!r}>"


class HashSlot:
    __slots__ = ("tags", "items", "overflow")

    def __init__(self) -> None:
        self.tags: list[int] = []
        self.items: list[TrieItem] = []
        self.overflow: HashSlot | None = None


_GOLDEN = 0x9E3779B1


def slot_index(h: int, shift: int) -> int:
    # Multiplicative mixing keeps slot choice independent of the tag bits;
    # raw CRC bits are affine in the input and correlate badly.
    return ((h * _GOLDEN) & 0xFFFFFFFF) >> shift


class LookupStats:
    """Per-thread lookup counters."""

    __slots__ = ("lookups", "probe_hist", "lpm_restarts", "version_restarts", "bytes_folded")

    def __init__(self) -> None:
        self.lookups = 0
        self.probe_hist = [0] * 40
        self.lpm_restarts = 0
        self.version_restarts = 0
        self.bytes_folded = 0

    def merge(self, other: LookupStats) -> None:
        self.lookups += other.lookups
        self.lpm_restarts += other.lpm_restarts
        self.version_restarts += other.version_restarts
        self.bytes_folded += other.bytes_folded
        for i, c in enumerate(other.probe_hist):
            self.probe_hist[i] += c


class MetaTrieHT:
    def __init__(self, nslots: int = 16) -> None:
        if nslots & (nslots - 1):
            raise ValueError("slot count must be a power of two")
        self.slots = [HashSlot() for _ in range(nslots)]
        self.shift = 32 - (nslots.bit_length() - 1)
        self.count = 0
        self.version = 0
        self.root: TrieItem | None = None

    # -- plain hash-table operations --------------------------------------

    def get(self, prefix: bytes, h: int) -> TrieItem | None:
        tag = h & 0xFFFF
        slot = self.slots[((h * 0x9E3779B1) & 0xFFFFFFFF) >> self.shift]
        while slot is not None:
            tags = slot.tags
            if tag in tags:
                items = slot.items
                for j in range(len(tags)):
                    if tags[j] == tag and items[j].prefix == prefix:
                        return items[j]
            slot = slot.overflow
        return None

    def set(self, item: TrieItem) -> None:
        """Insert ``item`` under its prefix, replacing any previous item."""
        h = item.hash
        tag = h & 0xFFFF
        slot = self.slots[slot_index(h, self.shift)]
        free = None
        while True:
            tags = slot.tags
            for j in range(len(tags)):
                if tags[j] == tag and slot.items[j].prefix == item.prefix:
                    slot.items[j] = item
                    if not item.prefix:
                        self.root = item
                    return
            if free is None and len(tags) < SLOT_WIDTH:
                free = slot
            if slot.overflow is None:
                break
            slot = slot.overflow
        if free is None:
            free = slot.overflow = HashSlot()
        free.tags.append(tag)
        free.items.append(item)
        self.count += 1
        if not item.prefix:
            self.root = item
        if self.count > MAX_LOAD * SLOT_WIDTH * len(self.slots):
            self._resize(2 * len(self.slots))

    def remove(self, prefix: bytes, h: int) -> TrieItem | None:
        tag = h & 0xFFFF
        head = slot = self.slots[slot_index(h, self.shift)]
        prev = None
        while slot is not None:
            tags = slot.tags
            for j in range(len(tags)):
                if tags[j] == tag and slot.items[j].prefix == prefix:
                    item = slot.items.pop(j)
                    del tags[j]
                    self.count -= 1
                    if not tags and slot is not head:
                        prev.overflow = slot.overflow
                    if not prefix:
                        self.root = None
                    return item
            prev, slot = slot, slot.overflow
        log.debug("remove of absent prefix %r", prefix)
        return None

    def _resize(self, nslots: int) -> None:
        items = list(self.items())
        self.slots = [HashSlot() for _ in range(nslots)]
        self.shift = 32 - (nslots.bit_length() - 1)
        self.count = 0
        for it in items:
            self.set(it)

    def items(self):
        for head in self.slots:
            slot = head
            while slot is not None:
                yield from slot.items
                slot = slot.overflow

    def lookup(self, prefix: bytes) -> TrieItem | None:
        return self.get(prefix, crc32c(prefix))

    def dump(self) -> list[tuple]:
        return sorted(it.dump() for it in self.items())

    def nbytes(self) -> int:
        """Approximate memory held by this table (slots, items, prefixes)."""
        import sys
        total = sys.getsizeof(self) + sys.getsizeof(self.slots)
        for head in self.slots:
            slot = head
            while slot is not None:
                total += (sys.getsizeof(slot) + sys.getsizeof(slot.tags)
                          + sys.getsizeof(slot.items))
                for it in slot.items:
                    total += sys.getsizeof(it) + sys.getsizeof(it.prefix)
                slot = slot.overflow
        return total

    # -- longest prefix match ---------------------------------------------

    def search_lpm(self, kref: KeyRef, limit: int, stats: LookupStats | None = None):
        """Item for the longest prefix of ``kref.key`` (up to ``limit`` bytes)
        present in the table, and the CRC of that prefix.

        The first pass trusts tag matches; the final prefix is verified once
        and a mismatch reruns the search with full comparisons.
        """
        key = kref.key
        slots = self.slots
        shift = self.shift
        m, n = 0, limit + 1
        crc_m = 0
        item = self.root
        hi_len, hi_crc = kref.known_len, kref.known_crc
        probes = folded = 0
        while m + 1 < n:
            p = (m + n) >> 1
            h = crc32c(key[m:p], crc_m)
            folded += p - m
            probes += 1
            if p > hi_len:
                hi_len, hi_crc = p, h
            tag = h & 0xFFFF
            slot = slots[((h * 0x9E3779B1) & 0xFFFFFFFF) >> shift]
            while slot is not None:
                tags = slot.tags
                if tag in tags:
                    item = slot.items[tags.index(tag)]
                    m, crc_m = p, h
                    break
                slot = slot.overflow
            else:
                n = p
        if stats is not None:
            stats.probe_hist[probes] += 1
        if m and item.prefix != key[:m]:
            if stats is not None:
                stats.lpm_restarts += 1
            item, crc_m, p2, f2 = self._search_lpm_full(key, limit, stats)
            folded += f2
        kref.folded += folded
        if hi_len > kref.known_len:
            kref.known_len, kref.known_crc = hi_len, hi_crc
        return item, crc_m

    def _search_lpm_full(self, key: bytes, limit: int, stats: LookupStats | None):
        m, n = 0, limit + 1
        crc_m = 0
        item = self.root
        probes = folded = 0
        while m + 1 < n:
            p = (m + n) >> 1
            h = crc32c(key[m:p], crc_m)
            folded += p - m
            probes += 1
            found = self.get(key[:p], h)
            if found is not None:
                m, crc_m, item = p, h, found
            else:
                n = p
        if stats is not None:
            stats.probe_hist[probes] += 1
        return item, crc_m, probes, folded


def find_one_sibling(bitmap: int, missing: int) -> int:
    """Nearest child token below ``missing``, else the nearest one above."""
    below = bitmap & ((1 << missing) - 1)
    if below:
        return below.bit_length() - 1
    above = bitmap >> (missing + 1)
    if not above:
        raise ValueError("bitmap has no sibling for the missing token")
    return missing + (above & -above).bit_length()


def search_trie_ht(ht: MetaTrieHT, kref: KeyRef, max_anchor_len: int,
                   stats: LookupStats | None = None) -> LeafNode:
    """Target leaf of ``kref``: the last leaf whose anchor base is <= key."""
    key = kref.key
    klen = len(key)
    item, crc = ht.search_lpm(kref, klen if klen < max_anchor_len else max_anchor_len, stats)
    if item.leaf is not None:
        return item.leaf
    plen = len(item.prefix)
    if plen == klen:
        leaf = item.leftmost
        if key < leaf.base:
            leaf = leaf.left
        return leaf
    missing = key[plen]
    sib = find_one_sibling(item.bitmap, missing)
    tok = bytes((sib,))
    kref.folded += 1
    child = ht.get(item.prefix + tok, crc32c(tok, crc))
    if child.leaf is not None:
        return child.leaf.left if sib > missing else child.leaf
    if sib > missing:
        return child.leftmost.left
    return child.rightmost


def _prefix_hashes(key: bytes) -> list[int]:
    hs = [0]
    crc = 0
    for b in key:
        crc = crc32c(bytes((b,)), crc)
        hs.append(crc)
    return hs


def alloc_internal_node(init_bit: int, leftmost: LeafNode, rightmost: LeafNode,
                        prefix: bytes, h: int) -> TrieItem:
    return TrieItem(prefix, h, None, 1 << init_bit, leftmost, rightmost)


def trie_insert_anchor(ht: MetaTrieHT, leaf: LeafNode) -> list[bytes]:
    """Register ``leaf.anchor`` and all its prefixes.

    ``leaf`` must already be linked into the LeafList.  An existing anchor
    that is a prefix of the new one (necessarily the left neighbour's) is
    pushed down by appending a zero byte.  Returns the touched prefixes.
    """
    key = leaf.anchor
    hs = _prefix_hashes(key)
    ht.set(TrieItem(key, hs[-1], leaf))
    touched = [key]
    for plen in range(len(key)):
        prf = key[:plen]
        node = ht.get(prf, hs[plen])
        if node is not None and node.leaf is not None:
            moved = node.leaf
            parent = alloc_internal_node(0, moved, moved, prf, hs[plen])
            ht.set(parent)
            node.prefix = prf + b"\0"
            node.hash = crc32c(b"\0", hs[plen])
            moved.anchor = node.prefix
            ht.set(node)
            touched.append(node.prefix)
            node = parent
        if node is None:
            ht.set(alloc_internal_node(key[plen], leaf, leaf, prf, hs[plen]))
        else:
            node.bitmap |= 1 << key[plen]
            if node.leftmost is leaf.right:
                node.leftmost = leaf
            if node.rightmost is leaf.left:
                node.rightmost = leaf
        touched.append(prf)
    return touched


def trie_remove_anchor(ht: MetaTrieHT, victim: LeafNode) -> list[bytes]:
    """Drop ``victim``'s anchor and the prefixes only it used.

    ``victim`` must still be linked so extreme references can move to its
    neighbours.  Zero bytes appended to a surviving anchor that are no longer
    needed are removed again.  Returns the touched prefixes.
    """
    key = victim.anchor
    hs = _prefix_hashes(key)
    ht.remove(key, hs[-1])
    touched = [key]
    removed = True
    deepest = None
    for plen in range(len(key) - 1, -1, -1):
        prf = key[:plen]
        node = ht.get(prf, hs[plen])
        touched.append(prf)
        if removed:
            node.bitmap &= ~(1 << key[plen])
            if not node.bitmap:
                ht.remove(prf, hs[plen])
                continue
            removed = False
            deepest = node
        if node.leftmost is victim:
            node.leftmost = victim.right
        if node.rightmost is victim:
            node.rightmost = victim.left
    if deepest is not None:
        touched.extend(_collapse(ht, deepest))
    return touched


def _collapse(ht: MetaTrieHT, node: TrieItem) -> list[bytes]:
    touched = []
    while node is not None and node.leaf is None and node.bitmap == 1:
        prf = node.prefix
        child = ht.get(prf + b"\0", crc32c(b"\0", node.hash))
        if child is None or child.leaf is None or child.leaf.ext == 0:
            break
        ht.remove(child.prefix, child.hash)
        touched.append(child.prefix)
        child.prefix = prf
        child.hash = node.hash
        child.leaf.anchor = prf
        ht.set(child)
        touched.append(prf)
        if not prf or prf[-1] != 0:
            break
        node = ht.get(prf[:-1], crc32c(prf[:-1]))
    return touched
