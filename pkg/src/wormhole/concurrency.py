"""Reader/writer coordination for a shared index.

Leaves carry reader-writer locks.  The meta table has two copies: writers
change the unpublished mirror under a single mutex, publish it with one
pointer store, wait until every registered reader has passed a quiescent
point, then replay the same changes on the retired copy.  Leaves touched by
a split or merge are stamped with the version that will be published; a
reader that arrives through an older table sees the stamp and starts over.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

from .leaf import LeafNode
from .metatrie import LookupStats, MetaTrieHT, TrieItem


class RWLock:
    """Writer-preferring reader-writer lock."""

    __slots__ = ("_cond", "_readers", "_writer", "_waiting")

    def __init__(self) -> None:
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer = False
        self._waiting = 0

    def acquire_shared(self) -> None:
        with self._cond:
            while self._writer or self._waiting:
                self._cond.wait()
            self._readers += 1

    def release_shared(self) -> None:
        with self._cond:
            self._readers -= 1
            if not self._readers and self._waiting:
                self._cond.notify_all()

    def acquire_exclusive(self) -> None:
        with self._cond:
            self._waiting += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._waiting -= 1
            self._writer = True

    def release_exclusive(self) -> None:
        with self._cond:
            self._writer = False
            self._cond.notify_all()

    @property
    def state(self) -> tuple[int, bool]:
        return self._readers, self._writer


def leaf_lock_shared(leaf: LeafNode) -> None:
    leaf.lock.acquire_shared()


def leaf_unlock_shared(leaf: LeafNode) -> None:
    leaf.lock.release_shared()


def leaf_lock_exclusive(leaf: LeafNode) -> None:
    leaf.lock.acquire_exclusive()


def leaf_unlock_exclusive(leaf: LeafNode) -> None:
    leaf.lock.release_exclusive()


def lock_leaves_exclusive(leaves: list[LeafNode]) -> None:
    """Exclusive locks on neighbouring leaves, always left to right."""
    for a, b in zip(leaves, leaves[1:]):
        if a.right is not b:
            raise RuntimeError("leaves must be adjacent and given left to right")
    for leaf in leaves:
        leaf.lock.acquire_exclusive()


class ReaderRecord:
    __slots__ = ("seen", "stats", "thread_name")

    def __init__(self, thread_name: str) -> None:
        self.seen: int | None = None  # None marks a quiescent thread
        self.stats = LookupStats()
        self.thread_name = thread_name


class ReaderRegistry:
    """Fixed-capacity set of threads allowed to read the index."""

    def __init__(self, capacity: int = 64) -> None:
        self.capacity = capacity
        self._records: list[ReaderRecord] = []
        self._retired = LookupStats()
        self._local = threading.local()
        self._lock = threading.Lock()

    def register(self) -> ReaderRecord:
        rec = getattr(self._local, "rec", None)
        if rec is not None:
            return rec
        with self._lock:
            if len(self._records) >= self.capacity:
                raise RuntimeError(f"reader registry full ({self.capacity} threads)")
            rec = ReaderRecord(threading.current_thread().name)
            self._records = self._records + [rec]
        self._local.rec = rec
        return rec

    def unregister(self) -> None:
        rec = getattr(self._local, "rec", None)
        if rec is None:
            return
        rec.seen = None
        with self._lock:
            self._records = [r for r in self._records if r is not rec]
            self._retired.merge(rec.stats)
        self._local.rec = None

    def record(self) -> ReaderRecord:
        rec = getattr(self._local, "rec", None)
        if rec is None:
            raise RuntimeError(
                f"thread {threading.current_thread().name!r} is not registered with the index")
        return rec

    def wait_grace(self, version: int) -> None:
        """Return once no registered thread can still be using a table older
        than ``version``."""
        for rec in self._records:
            while True:
                seen = rec.seen
                if seen is None or seen >= version:
                    break
                time.sleep(0)

    def stats(self) -> LookupStats:
        total = LookupStats()
        total.merge(self._retired)
        for rec in self._records:
            total.merge(rec.stats)
        return total

    def __len__(self) -> int:
        return len(self._records)


@dataclass
class ReadGuard:
    table: MetaTrieHT
    version_seen: int
    record: ReaderRecord


@dataclass
class MetaUpdate:
    """Final state of every prefix touched by one split or merge (None for a
    removed prefix), plus the leaves stamped for it."""

    changes: list[tuple[bytes, TrieItem | None]]
    affected_leaves: list[LeafNode] = field(default_factory=list)

    @classmethod
    def capture(cls, table: MetaTrieHT, touched: list[bytes],
                leaves: list[LeafNode]) -> MetaUpdate:
        changes = []
        for prefix in dict.fromkeys(touched):
            item = table.lookup(prefix)
            changes.append((prefix, None if item is None else item.copy()))
        return cls(changes, list(leaves))

    def apply(self, table: MetaTrieHT) -> None:
        for prefix, item in self.changes:
            if item is None:
                table.remove(prefix, _hash_of(prefix))
            else:
                table.set(item.copy())


def _hash_of(prefix: bytes) -> int:
    from .keys import crc32c
    return crc32c(prefix)


class MetaPublisher:
    """Owns the published table, its mirror and the meta writer lock."""

    def __init__(self, registry: ReaderRegistry) -> None:
        self.registry = registry
        self.current = MetaTrieHT()
        self.mirror = MetaTrieHT()
        self.lock = threading.Lock()
        self.updates = 0
        self.listeners: list = []

    @property
    def version(self) -> int:
        return self.current.version

    def read_enter(self) -> ReadGuard:
        rec = self.registry.record()
        while True:
            table = self.current
            rec.seen = table.version
            if self.current is table:
                return ReadGuard(table, table.version, rec)

    @staticmethod
    def read_exit(guard: ReadGuard) -> None:
        guard.record.seen = None

    def stamp(self, leaves: list[LeafNode]) -> int:
        """Caller holds the meta lock and exclusive locks on ``leaves``."""
        nxt = self.current.version + 1
        for leaf in leaves:
            leaf.expected_version = nxt
        return nxt

    def run_meta_update(self, update: MetaUpdate, release=None) -> None:
        """Publish the mirror (already holding ``update``), release the leaf
        locks via ``release``, wait a grace period and replay ``update`` on the
        retired table, which becomes the next mirror."""
        old, new = self.current, self.mirror
        new.version = old.version + 1
        self.current = new
        if release is not None:
            release()
        self.registry.wait_grace(new.version)
        update.apply(old)
        self.mirror = old
        self.updates += 1
        for fn in self.listeners:
            fn(self, update)
