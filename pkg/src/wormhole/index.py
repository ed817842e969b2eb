"""The ordered index: GET/SET/DEL and ascending range scans."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field

from .concurrency import MetaPublisher, MetaUpdate, ReaderRegistry, RWLock
from .keys import KeyRef, crc32c
from .leaf import (
    LeafConfig, LeafItem, LeafNode, choose_split_point, inc_sort, leaf_delete,
    leaf_insert, point_search_leaf, rebuild_tag_arrays, search_greater_equal,
)
from .metatrie import (
    LookupStats, MetaTrieHT, TrieItem, search_trie_ht, trie_insert_anchor,
    trie_remove_anchor,
)


@dataclass
class IndexStats:
    key_count: int
    leaf_count: int
    fat_leaf_count: int
    max_anchor_len: int
    mean_anchor_len: float
    meta_item_count: int
    meta_bytes: int
    mirror_bytes: int
    leaf_bytes: int
    splits: int
    merges: int
    lookups: int
    lpm_restarts: int
    version_restarts: int
    bytes_folded: int
    probe_histogram: dict[int, int] = field(default_factory=dict)

    @property
    def total_bytes(self) -> int:
        return self.meta_bytes + self.leaf_bytes


class Wormhole:
    """Ordered map from byte strings to opaque values.

    With ``thread_safe=True`` every calling thread other than the creator must
    call :meth:`register` first.  ``thread_safe=False`` drops all locking and
    keeps a single meta table.
    """

    def __init__(self, config: LeafConfig | None = None, thread_safe: bool = True,
                 max_threads: int = 64) -> None:
        self.config = config or LeafConfig()
        self.thread_safe = thread_safe
        self.max_anchor_len = 0
        self.splits = 0
        self.merges = 0
        first = LeafNode(b"")
        self.head = first
        if thread_safe:
            self.registry = ReaderRegistry(max_threads)
            self.meta = MetaPublisher(self.registry)
            first.lock = RWLock()
            for table in (self.meta.current, self.meta.mirror):
                table.set(TrieItem(b"", 0, first))
            self.registry.register()
            self.get = self._get_safe
            self.set = self._set_safe
            self.delete = self._delete_safe
            self.range_ascending = self._range_safe
        else:
            self.registry = None
            self.meta = None
            self._table = MetaTrieHT()
            self._table.set(TrieItem(b"", 0, first))
            self._stats = LookupStats()
            self.get = self._get_unsafe
            self.set = self._set_unsafe
            self.delete = self._delete_unsafe
            self.range_ascending = self._range_unsafe

    # -- plumbing -----------------------------------------------------------

    @property
    def table(self) -> MetaTrieHT:
        """The currently published meta table."""
        return self.meta.current if self.thread_safe else self._table

    def register(self):
        if self.thread_safe:
            return self.registry.register()
        return None

    def unregister(self) -> None:
        if self.thread_safe:
            self.registry.unregister()

    def close(self) -> None:
        leaf = self.head
        while leaf is not None:
            nxt = leaf.right
            leaf.items = []
            leaf.tags = []
            leaf.hitems = []
            leaf.left = leaf.right = None
            leaf = nxt
        self.head = None

    def leaves(self):
        leaf = self.head
        while leaf is not None:
            yield leaf
            leaf = leaf.right

    def target_leaf(self, key) -> LeafNode:
        kref = key if type(key) is KeyRef else KeyRef(key)
        return search_trie_ht(self.table, kref, self.max_anchor_len)

    def __len__(self) -> int:
        return sum(len(leaf.items) for leaf in self.leaves())

    # -- unsynchronized operations ----------------------------------------

    def _get_unsafe(self, key):
        kref = key if type(key) is KeyRef else KeyRef(key)
        stats = self._stats
        leaf = search_trie_ht(self._table, kref, self.max_anchor_len, stats)
        k = kref.key
        i = point_search_leaf(leaf, k, kref.hash32 & 0xFFFF)
        stats.lookups += 1
        stats.bytes_folded += kref.folded
        hitems = leaf.hitems
        if i < len(hitems) and hitems[i].key == k:
            return hitems[i].value
        return None

    def _set_unsafe(self, key, value) -> None:
        kref = key if type(key) is KeyRef else KeyRef(key)
        leaf = search_trie_ht(self._table, kref, self.max_anchor_len, self._stats)
        self._insert_into(leaf, kref, value)

    def _delete_unsafe(self, key) -> bool:
        kref = key if type(key) is KeyRef else KeyRef(key)
        leaf = search_trie_ht(self._table, kref, self.max_anchor_len, self._stats)
        k = kref.key
        i = point_search_leaf(leaf, k, kref.hash32 & 0xFFFF)
        if i >= len(leaf.hitems) or leaf.hitems[i].key != k:
            return False
        leaf_delete(leaf, i)
        self._after_delete(leaf)
        pair = self._merge_candidate(leaf)
        if pair is not None:
            self._merge_structure(*pair, self._table)
        return True

    def _range_unsafe(self, start: bytes, count: int) -> list[tuple[bytes, object]]:
        out: list[tuple[bytes, object]] = []
        if count <= 0:
            return out
        leaf = search_trie_ht(self._table, KeyRef(start), self.max_anchor_len, self._stats)
        thr = self.config.sort_threshold
        inc_sort(leaf, thr)
        i = search_greater_equal(leaf, start)
        while count > 0 and leaf is not None:
            chunk = leaf.items[i:i + count]
            out.extend((it.key, it.value) for it in chunk)
            count -= len(chunk)
            leaf = leaf.right
            i = 0
            if leaf is not None and count > 0:
                inc_sort(leaf, thr)
        return out

    def _insert_into(self, leaf: LeafNode, kref: KeyRef, value) -> None:
        """Unsafe-mode SET body once the target leaf is known."""
        k = kref.key
        tag = kref.hash32 & 0xFFFF
        i = point_search_leaf(leaf, k, tag)
        if i < len(leaf.hitems) and leaf.hitems[i].key == k:
            leaf.hitems[i].value = value
            return
        if len(leaf.items) >= self.config.max_leaf_size:
            got = self._split_structure(leaf, self._table)
            if got is not None:
                new = got[0]
                if not k < new.base:
                    leaf = new
                i = None
        self._leaf_add(leaf, LeafItem(k, tag, value), i)

    def _leaf_add(self, leaf: LeafNode, item: LeafItem, pos: int | None) -> None:
        full = len(leaf.items) >= self.config.max_leaf_size
        leaf_insert(leaf, item, self.config.max_leaf_size, allow_fat=full, pos=pos)
        if full:
            leaf.fat = True

    def _after_delete(self, leaf: LeafNode) -> None:
        if leaf.fat and len(leaf.items) <= self.config.max_leaf_size:
            leaf.fat = False

    def _merge_candidate(self, leaf: LeafNode):
        ms = self.config.merge_size
        left, right = leaf.left, leaf.right
        if left is not None and not left.fat and not leaf.fat \
                and len(leaf.items) + len(left.items) < ms:
            return left, leaf
        if right is not None and not right.fat and not leaf.fat \
                and len(leaf.items) + len(right.items) < ms:
            return leaf, right
        return None

    # -- structural changes -----------------------------------------------

    def _split_structure(self, leaf: LeafNode, table: MetaTrieHT):
        """Cut ``leaf`` in two and register the new anchor in ``table``.

        Returns ``(new_leaf, touched_prefixes)``, or None when no legal anchor
        exists (the leaf then grows fat).  In thread-safe mode the caller
        holds the meta lock and ``leaf``'s exclusive lock; the new leaf is
        returned exclusively locked and both leaves are stamped.
        """
        inc_sort(leaf, self.config.sort_threshold)
        if len(leaf.items) < 2:
            return None
        nxt = leaf.right
        got = choose_split_point(leaf, leaf.base, None if nxt is None else nxt.anchor)
        if got is None:
            return None
        i, base, anchor = got
        new = LeafNode(base, anchor)
        if self.thread_safe:
            new.lock = RWLock()
            new.lock.acquire_exclusive()
            self.meta.stamp([leaf, new])
        new.items = leaf.items[i:]
        del leaf.items[i:]
        leaf.nsorted = len(leaf.items)
        new.nsorted = len(new.items)
        rebuild_tag_arrays(leaf)
        rebuild_tag_arrays(new)
        cap = self.config.max_leaf_size
        leaf.fat = len(leaf.items) > cap
        new.fat = len(new.items) > cap
        new.left = leaf
        new.right = nxt
        if nxt is not None:
            nxt.left = new
        leaf.right = new
        if len(anchor) > self.max_anchor_len:
            self.max_anchor_len = len(anchor)
        touched = trie_insert_anchor(table, new)
        self.splits += 1
        return new, touched

    def _merge_structure(self, left: LeafNode, victim: LeafNode, table: MetaTrieHT) -> list[bytes]:
        """Move ``victim``'s items into ``left`` and drop its anchor."""
        moved = victim.items
        if left.nsorted == len(left.items):
            left.nsorted += victim.nsorted
        left.items = left.items + moved
        rebuild_tag_arrays(left)
        touched = trie_remove_anchor(table, victim)
        left.right = victim.right
        if victim.right is not None:
            victim.right.left = left
        victim.dead = True
        self.merges += 1
        return touched

    # -- thread-safe operations -------------------------------------------

    def _pin_search(self, kref: KeyRef, rec):
        """Target leaf via the published table.  The reader goes quiescent as
        soon as the table walk ends: a reader blocked on a leaf lock must not
        hold up a grace period, and leaf stamps catch any staleness."""
        meta = self.meta
        while True:
            table = meta.current
            version = table.version
            rec.seen = version
            if meta.current is table:
                break
        leaf = search_trie_ht(table, kref, self.max_anchor_len, rec.stats)
        rec.seen = None
        # the version snapshot, not the table: a retired table object can be
        # republished later under a higher version
        return version, leaf

    def _get_safe(self, key):
        kref = key if type(key) is KeyRef else KeyRef(key)
        rec = self.registry.record()
        k = kref.key
        stats = rec.stats
        while True:
            version, leaf = self._pin_search(kref, rec)
            lock = leaf.lock
            lock.acquire_shared()
            if leaf.expected_version > version:
                lock.release_shared()
                stats.version_restarts += 1
                continue
            i = point_search_leaf(leaf, k, kref.hash32 & 0xFFFF)
            hitems = leaf.hitems
            value = hitems[i].value if i < len(hitems) and hitems[i].key == k else None
            lock.release_shared()
            stats.lookups += 1
            stats.bytes_folded += kref.folded
            return value

    def _lock_target(self, kref: KeyRef, rec) -> LeafNode:
        """Exclusively locked target leaf, validated against its table."""
        while True:
            version, leaf = self._pin_search(kref, rec)
            leaf.lock.acquire_exclusive()
            if leaf.expected_version > version:
                leaf.lock.release_exclusive()
                rec.stats.version_restarts += 1
                continue
            return leaf

    def _set_safe(self, key, value) -> None:
        kref = key if type(key) is KeyRef else KeyRef(key)
        rec = self.registry.record()
        leaf = self._lock_target(kref, rec)
        k = kref.key
        tag = kref.hash32 & 0xFFFF
        i = point_search_leaf(leaf, k, tag)
        if i < len(leaf.hitems) and leaf.hitems[i].key == k:
            leaf.hitems[i].value = value
            leaf.lock.release_exclusive()
            return
        if len(leaf.items) < self.config.max_leaf_size:
            leaf_insert(leaf, LeafItem(k, tag, value), self.config.max_leaf_size, pos=i)
            leaf.lock.release_exclusive()
            return
        meta = self.meta
        with meta.lock:
            got = self._split_structure(leaf, meta.mirror)
            if got is None:
                self._leaf_add(leaf, LeafItem(k, tag, value), i)
                leaf.lock.release_exclusive()
                return
            new, touched = got
            self._leaf_add(leaf if k < new.base else new, LeafItem(k, tag, value), None)
            update = MetaUpdate.capture(meta.mirror, touched, [leaf, new])

            def release():
                leaf.lock.release_exclusive()
                new.lock.release_exclusive()
            meta.run_meta_update(update, release)

    def _delete_safe(self, key) -> bool:
        kref = key if type(key) is KeyRef else KeyRef(key)
        rec = self.registry.record()
        leaf = self._lock_target(kref, rec)
        k = kref.key
        i = point_search_leaf(leaf, k, kref.hash32 & 0xFFFF)
        if i >= len(leaf.hitems) or leaf.hitems[i].key != k:
            leaf.lock.release_exclusive()
            return False
        leaf_delete(leaf, i)
        self._after_delete(leaf)
        pair = self._merge_candidate(leaf)
        leaf.lock.release_exclusive()
        if pair is not None:
            self._try_merge_safe(*pair)
        return True

    def _try_merge_safe(self, left: LeafNode, victim: LeafNode) -> bool:
        left.lock.acquire_exclusive()
        victim.lock.acquire_exclusive()
        meta = self.meta
        with meta.lock:
            ok = (not left.dead and not victim.dead and left.right is victim
                  and not left.fat and not victim.fat
                  and len(left.items) + len(victim.items) < self.config.merge_size)
            if not ok:
                victim.lock.release_exclusive()
                left.lock.release_exclusive()
                return False
            meta.stamp([left, victim])
            touched = self._merge_structure(left, victim, meta.mirror)
            update = MetaUpdate.capture(meta.mirror, touched, [left, victim])

            def release():
                victim.lock.release_exclusive()
                left.lock.release_exclusive()
            meta.run_meta_update(update, release)
        return True

    def _range_safe(self, start: bytes, count: int) -> list[tuple[bytes, object]]:
        if count <= 0:
            return []
        rec = self.registry.record()
        thr = self.config.sort_threshold
        kref = KeyRef(start)
        while True:
            version, leaf = self._pin_search(kref, rec)
            out: list[tuple[bytes, object]] = []
            want = count
            first = True
            ok = True
            while want > 0 and leaf is not None:
                lock = leaf.lock
                lock.acquire_shared()
                exclusive = False
                if leaf.nsorted != len(leaf.items):
                    lock.release_shared()
                    lock.acquire_exclusive()
                    exclusive = True
                if leaf.expected_version > version:
                    ok = False
                else:
                    if exclusive:
                        inc_sort(leaf, thr)
                    i = search_greater_equal(leaf, start) if first else 0
                    chunk = leaf.items[i:i + want]
                    out.extend((it.key, it.value) for it in chunk)
                    want -= len(chunk)
                    nxt = leaf.right
                if exclusive:
                    lock.release_exclusive()
                else:
                    lock.release_shared()
                if not ok:
                    break
                leaf = nxt
                first = False
            if ok:
                return out
            rec.stats.version_restarts += 1

    # -- reporting ----------------------------------------------------------

    def lookup_stats(self) -> LookupStats:
        if self.thread_safe:
            return self.registry.stats()
        return self._stats

    def stats(self) -> IndexStats:
        """Counts and memory estimates; exact only while no writer runs."""
        keys = leaves = fat = anchor_total = 0
        leaf_bytes = 0
        getsize = sys.getsizeof
        for leaf in self.leaves():
            leaves += 1
            keys += len(leaf.items)
            fat += leaf.fat
            anchor_total += len(leaf.anchor)
            leaf_bytes += (getsize(leaf) + getsize(leaf.items) + getsize(leaf.tags)
                           + getsize(leaf.hitems) + getsize(leaf.base) + getsize(leaf.anchor))
            if leaf.lock is not None:
                leaf_bytes += getsize(leaf.lock) + getsize(leaf.lock._cond)
            for it in leaf.items:
                leaf_bytes += getsize(it) + getsize(it.key) + getsize(it.tag) + getsize(it.value)
        table = self.table
        meta_bytes = table.nbytes()
        mirror_bytes = self.meta.mirror.nbytes() if self.thread_safe else 0
        ls = self.lookup_stats()
        hist = {i: c for i, c in enumerate(ls.probe_hist) if c}
        return IndexStats(
            key_count=keys,
            leaf_count=leaves,
            fat_leaf_count=fat,
            max_anchor_len=self.max_anchor_len,
            mean_anchor_len=anchor_total / leaves,
            meta_item_count=table.count,
            meta_bytes=meta_bytes + mirror_bytes,
            mirror_bytes=mirror_bytes,
            leaf_bytes=leaf_bytes,
            splits=self.splits,
            merges=self.merges,
            lookups=ls.lookups,
            lpm_restarts=ls.lpm_restarts,
            version_restarts=ls.version_restarts,
            bytes_folded=ls.bytes_folded,
            probe_histogram=hist,
        )
