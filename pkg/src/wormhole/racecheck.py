"""Protocol-level race checker for the thread-safe index.

CPython offers no memory-level race detector, so this instruments the entry
points that touch shared state instead:

* leaf reads must hold that leaf's lock (shared or exclusive) and leaf writes
  its exclusive lock (lockset discipline);
* meta-table writes must hold the meta lock and target the unpublished table;
* structural changes must hold the meta lock and every affected leaf lock;
* a table must not change while any thread walks it (checked with a
  per-table mutation counter read before and after each walk).

Use as a context manager around the run, after :meth:`RaceDetector.attach`.
"""
from __future__ import annotations

import functools
import threading

from . import index as _index
from .concurrency import RWLock
from .metatrie import MetaTrieHT


class CheckedRWLock(RWLock):
    """RWLock that remembers which threads hold it."""

    __slots__ = ("owner", "holders")

    def __init__(self) -> None:
        super().__init__()
        self.owner: int | None = None
        self.holders: dict[int, int] = {}

    def acquire_shared(self) -> None:
        super().acquire_shared()
        tid = threading.get_ident()
        with self._cond:
            self.holders[tid] = self.holders.get(tid, 0) + 1

    def release_shared(self) -> None:
        tid = threading.get_ident()
        with self._cond:
            n = self.holders.get(tid, 0)
            if n <= 0:
                _report(f"thread {tid} released a shared lock it does not hold")
            elif n == 1:
                del self.holders[tid]
            else:
                self.holders[tid] = n - 1
        super().release_shared()

    def acquire_exclusive(self) -> None:
        super().acquire_exclusive()
        self.owner = threading.get_ident()

    def release_exclusive(self) -> None:
        if self.owner != threading.get_ident():
            _report("exclusive lock released by a thread that does not own it")
        self.owner = None
        super().release_exclusive()

    def held(self, exclusive: bool) -> bool:
        tid = threading.get_ident()
        if self.owner == tid:
            return True
        return not exclusive and self.holders.get(tid, 0) > 0


class OwnedLock:
    """Mutex that records its owner thread."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.owner: int | None = None

    def acquire(self, blocking: bool = True, timeout: float = -1) -> bool:
        ok = self._lock.acquire(blocking, timeout)
        if ok:
            self.owner = threading.get_ident()
        return ok

    def release(self) -> None:
        if self.owner != threading.get_ident():
            _report("meta lock released by a thread that does not own it")
        self.owner = None
        self._lock.release()

    __enter__ = acquire

    def __exit__(self, *exc) -> None:
        self.release()

    def locked(self) -> bool:
        return self._lock.locked()


_active: RaceDetector | None = None


def _report(msg: str) -> None:
    det = _active
    if det is not None:
        det.report(msg)


class RaceDetector:
    def __init__(self, max_reports: int = 100) -> None:
        self.races: list[str] = []
        self.race_count = 0
        self.checks = 0
        self.max_reports = max_reports
        self.index = None
        self._epochs: dict[int, int] = {}
        self._saved: list[tuple[object, str, object]] = []

    def report(self, msg: str) -> None:
        self.race_count += 1
        if len(self.races) < self.max_reports:
            self.races.append(f"[{threading.current_thread().name}] {msg}")

    def attach(self, idx) -> None:
        """Swap in checked locks; call while no other thread uses ``idx``."""
        if not idx.thread_safe:
            raise ValueError("race checking needs the thread-safe build")
        self.index = idx
        idx.meta.lock = OwnedLock()
        for leaf in idx.leaves():
            leaf.lock = CheckedRWLock()

    # -- helpers ------------------------------------------------------------

    def _leaf_ok(self, leaf, exclusive: bool, what: str) -> None:
        lock = leaf.lock
        if not isinstance(lock, CheckedRWLock):
            return
        self.checks += 1
        if not lock.held(exclusive):
            kind = "exclusive" if exclusive else "any"
            self.report(f"{what} on leaf {leaf.base!r} without {kind} lock")

    def _meta_owned(self, what: str) -> None:
        self.checks += 1
        lock = self.index.meta.lock
        if isinstance(lock, OwnedLock) and lock.owner != threading.get_ident():
            self.report(f"{what} without the meta lock")

    def _ours(self, table) -> bool:
        idx = self.index
        return idx is not None and (table is idx.meta.current or table is idx.meta.mirror)

    # -- patching -------------------------------------------------------------

    def _patch(self, obj, name: str, new) -> None:
        self._saved.append((obj, name, getattr(obj, name)))
        setattr(obj, name, new)

    def __enter__(self) -> RaceDetector:
        global _active
        if _active is not None:
            raise RuntimeError("a race detector is already active")
        _active = self
        det = self
        mod = _index

        def leaf_reader(fn):
            @functools.wraps(fn)
            def wrapper(leaf, *a, **kw):
                det._leaf_ok(leaf, False, fn.__name__)
                return fn(leaf, *a, **kw)
            return wrapper

        def leaf_writer(fn):
            @functools.wraps(fn)
            def wrapper(leaf, *a, **kw):
                det._leaf_ok(leaf, True, fn.__name__)
                return fn(leaf, *a, **kw)
            return wrapper

        for name in ("point_search_leaf", "search_greater_equal"):
            self._patch(mod, name, leaf_reader(getattr(mod, name)))
        for name in ("leaf_insert", "leaf_delete", "inc_sort", "rebuild_tag_arrays"):
            self._patch(mod, name, leaf_writer(getattr(mod, name)))
        self._patch(mod, "RWLock", CheckedRWLock)

        walk = mod.search_trie_ht

        @functools.wraps(walk)
        def checked_walk(ht, kref, max_len, stats=None):
            if not det._ours(ht):
                return walk(ht, kref, max_len, stats)
            det.checks += 1
            rec = det.index.registry.record()
            if rec.seen is None or rec.seen > ht.version:
                det.report("table walk without announcing its version")
            before = det._epochs.get(id(ht), 0)
            out = walk(ht, kref, max_len, stats)
            if det._epochs.get(id(ht), 0) != before:
                det.report("meta table modified during a reader's walk")
            return out
        self._patch(mod, "search_trie_ht", checked_walk)

        def table_writer(fn):
            @functools.wraps(fn)
            def wrapper(table, *a, **kw):
                if det._ours(table):
                    det._meta_owned(f"table {fn.__name__}")
                    if table is det.index.meta.current:
                        det.report(f"table {fn.__name__} on the published table")
                    det._epochs[id(table)] = det._epochs.get(id(table), 0) + 1
                return fn(table, *a, **kw)
            return wrapper
        for name in ("set", "remove"):
            self._patch(MetaTrieHT, name, table_writer(getattr(MetaTrieHT, name)))

        split = mod.Wormhole._split_structure

        @functools.wraps(split)
        def checked_split(idx, leaf, table):
            if idx is det.index:
                det._meta_owned("split")
                det._leaf_ok(leaf, True, "split")
            out = split(idx, leaf, table)
            if idx is det.index and out is not None:
                det._leaf_ok(out[0], True, "split (new leaf)")
            return out
        self._patch(mod.Wormhole, "_split_structure", checked_split)

        merge = mod.Wormhole._merge_structure

        @functools.wraps(merge)
        def checked_merge(idx, left, victim, table):
            if idx is det.index:
                det._meta_owned("merge")
                det._leaf_ok(left, True, "merge (left)")
                det._leaf_ok(victim, True, "merge (victim)")
            return merge(idx, left, victim, table)
        self._patch(mod.Wormhole, "_merge_structure", checked_merge)
        return self

    def __exit__(self, *exc) -> None:
        global _active
        while self._saved:
            obj, name, old = self._saved.pop()
            setattr(obj, name, old)
        _active = None
