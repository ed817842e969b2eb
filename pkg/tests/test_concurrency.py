import random
import sys
import threading
import time

import pytest

from wormhole import LeafConfig, Wormhole
from wormhole.concurrency import (
    MetaPublisher, MetaUpdate, ReaderRegistry, RWLock, lock_leaves_exclusive,
)
from wormhole.leaf import LeafNode
from wormhole.metatrie import TrieItem
from wormhole.keys import crc32c
from wormhole.oracle import check_invariants


@pytest.fixture
def fast_switch():
    old = sys.getswitchinterval()
    sys.setswitchinterval(1e-5)
    yield
    sys.setswitchinterval(old)


def test_rwlock_shared_holders_coexist():
    lock = RWLock()
    lock.acquire_shared()
    done = threading.Event()

    def other():
        lock.acquire_shared()
        done.set()
        lock.release_shared()
    t = threading.Thread(target=other)
    t.start()
    assert done.wait(2)
    t.join()
    lock.release_shared()
    assert lock.state == (0, False)


def test_rwlock_exclusive_excludes():
    lock = RWLock()
    lock.acquire_exclusive()
    got = threading.Event()

    def reader():
        lock.acquire_shared()
        got.set()
        lock.release_shared()
    t = threading.Thread(target=reader)
    t.start()
    assert not got.wait(0.1)
    lock.release_exclusive()
    assert got.wait(2)
    t.join()


def test_rwlock_counter_integrity(fast_switch):
    lock = RWLock()
    box = [0]

    def bump():
        for _ in range(2000):
            lock.acquire_exclusive()
            v = box[0]
            time.sleep(0) if v % 97 == 0 else None
            box[0] = v + 1
            lock.release_exclusive()
    ts = [threading.Thread(target=bump) for _ in range(4)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert box[0] == 8000


def test_lock_leaves_requires_adjacency():
    a, b, c = LeafNode(b""), LeafNode(b"b"), LeafNode(b"c")
    for x in (a, b, c):
        x.lock = RWLock()
    a.right, b.left, b.right, c.left = b, a, c, b
    with pytest.raises(RuntimeError):
        lock_leaves_exclusive([b, a])
    with pytest.raises(RuntimeError):
        lock_leaves_exclusive([a, c])
    lock_leaves_exclusive([a, b, c])
    assert all(x.lock.state == (0, True) for x in (a, b, c))


def test_lock_order_stress_no_deadlock(fast_switch):
    leaves = [LeafNode(bytes([i])) for i in range(8)]
    for x, y in zip(leaves, leaves[1:]):
        x.right, y.left = y, x
    for x in leaves:
        x.lock = RWLock()
    iters = 25_000

    def run(seed):
        rng = random.Random(seed)
        for _ in range(iters):
            i = rng.randrange(7)
            if rng.random() < 0.5:
                pair = leaves[i:i + 2]
                lock_leaves_exclusive(pair)
                for x in reversed(pair):
                    x.lock.release_exclusive()
            else:
                leaves[i].lock.acquire_shared()
                leaves[i].lock.release_shared()
    ts = [threading.Thread(target=run, args=(s,), daemon=True) for s in range(4)]
    for t in ts:
        t.start()
    for t in ts:
        t.join(120)
    assert not any(t.is_alive() for t in ts), "deadlock"


def test_registry_capacity_and_registration():
    reg = ReaderRegistry(capacity=1)
    rec = reg.register()
    assert reg.register() is rec and len(reg) == 1
    errs = []

    def other():
        try:
            reg.register()
        except RuntimeError as exc:
            errs.append(exc)
    t = threading.Thread(target=other)
    t.start()
    t.join()
    assert errs
    reg.unregister()
    assert len(reg) == 0
    with pytest.raises(RuntimeError):
        reg.record()


def _publisher():
    reg = ReaderRegistry()
    pub = MetaPublisher(reg)
    root = LeafNode(b"")
    for t in (pub.current, pub.mirror):
        t.set(TrieItem(b"", 0, root))
    return reg, pub


def _update_adding(pub, prefix: bytes) -> MetaUpdate:
    pub.mirror.set(TrieItem(prefix, crc32c(prefix)))
    return MetaUpdate.capture(pub.mirror, [prefix], [])


def test_read_enter_exit_versions():
    reg, pub = _publisher()
    reg.register()
    g = pub.read_enter()
    assert g.version_seen == pub.version == 0 and g.table is pub.current
    pub.read_exit(g)
    assert g.record.seen is None


def test_update_without_readers_is_immediate():
    reg, pub = _publisher()
    seen = []
    pub.listeners.append(lambda p, u: seen.append(p.current.dump() == p.mirror.dump()))
    t0 = time.perf_counter()
    pub.run_meta_update(_update_adding(pub, b"x"))
    assert time.perf_counter() - t0 < 1
    assert seen == [True] and pub.version == 1
    assert pub.current.lookup(b"x") and pub.mirror.lookup(b"x")


def test_grace_period_waits_for_old_reader():
    reg, pub = _publisher()
    entered, leave = threading.Event(), threading.Event()
    old_table = pub.current

    def reader():
        reg.register()
        g = pub.read_enter()
        entered.set()
        leave.wait(5)
        # the table this reader pinned is untouched while it is inside
        assert g.table.lookup(b"y") is None
        pub.read_exit(g)
        reg.unregister()
    r = threading.Thread(target=reader)
    r.start()
    entered.wait(5)
    w = threading.Thread(target=pub.run_meta_update, args=(_update_adding(pub, b"y"),))
    w.start()
    time.sleep(0.2)
    assert w.is_alive(), "writer must wait for the pinned reader"
    assert pub.current is not old_table and old_table.lookup(b"y") is None
    leave.set()
    w.join(5)
    r.join(5)
    assert not w.is_alive()
    assert old_table.lookup(b"y") is not None and pub.mirror is old_table


def test_leaf_stamp_validation():
    reg, pub = _publisher()
    leaf = LeafNode(b"")
    assert leaf.expected_version <= pub.version  # untouched leaf validates
    v = pub.version
    pub.stamp([leaf])
    assert leaf.expected_version == v + 1 > pub.version  # a reader at v restarts
    pub.run_meta_update(MetaUpdate([], [leaf]))
    assert leaf.expected_version <= pub.version  # the retry at v + 1 validates


def test_two_writers_serialize(fast_switch):
    idx = Wormhole(LeafConfig(max_leaf_size=8))
    sets = [[b"a%05d" % i for i in range(2000)], [b"b%05d" % i for i in range(2000)]]

    def write(keys):
        idx.register()
        for k in keys:
            idx.set(k, k)
        idx.unregister()
    ts = [threading.Thread(target=write, args=(s,)) for s in sets]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    want = sorted(sets[0] + sets[1])
    assert [k for k, _ in idx.range_ascending(b"", 10_000)] == want
    assert check_invariants(idx) == []
    assert idx.meta.updates == idx.splits + idx.merges


def test_readers_with_splitting_writer(fast_switch):
    idx = Wormhole(LeafConfig(max_leaf_size=16))
    rng = random.Random(1)
    preload = [rng.randbytes(6) for _ in range(2000)]
    fresh = [rng.randbytes(6) for _ in range(6000)]
    for k in preload:
        idx.set(k, k)
    stop = threading.Event()
    bad = []

    def reader(seed):
        idx.register()
        r = random.Random(seed)
        while not stop.is_set():
            k = r.choice(preload)
            if idx.get(k) != k:
                bad.append(k)
            f = r.choice(fresh)
            v = idx.get(f)
            if v is not None and v != f:
                bad.append(f)
        idx.unregister()

    rs = [threading.Thread(target=reader, args=(i,)) for i in range(4)]
    for t in rs:
        t.start()
    splits0 = idx.splits
    for k in fresh:
        idx.set(k, k)
    stop.set()
    for t in rs:
        t.join()
    assert bad == []
    splits = idx.splits - splits0
    assert splits > 100
    assert idx.stats().version_restarts <= splits * 4
    assert check_invariants(idx) == []


# -- the protocol race checker catches seeded bugs ----------------------------

def _checked_index():
    from wormhole.racecheck import RaceDetector
    idx = Wormhole()
    for i in range(300):
        idx.set(i.to_bytes(4, "big"), i)
    det = RaceDetector()
    det.attach(idx)
    return idx, det


def test_racecheck_clean_run_reports_nothing():
    idx, det = _checked_index()
    with det:
        for i in range(300, 600):
            idx.set(i.to_bytes(4, "big"), i)
        assert idx.get((5).to_bytes(4, "big")) == 5
        idx.delete((7).to_bytes(4, "big"))
        assert len(list(idx.range_ascending(b"", 50))) == 50
    assert det.race_count == 0 and det.checks > 0


def test_racecheck_flags_unlocked_leaf_read():
    import wormhole.index as index_mod
    idx, det = _checked_index()
    leaf = idx.head
    with det:
        index_mod.point_search_leaf(leaf, b"\0\0\0\1", crc32c(b"\0\0\0\1") & 0xFFFF)
    assert det.race_count == 1
    assert "without any lock" in det.races[0]


def test_racecheck_flags_write_to_published_table():
    idx, det = _checked_index()
    current = idx.meta.current
    item = TrieItem(b"zz", crc32c(b"zz"))
    with det:
        with idx.meta.lock:
            current.set(item)
        current.remove(b"zz", item.hash)
    assert any("published table" in r for r in det.races)
    assert any("without the meta lock" in r for r in det.races)


def test_racecheck_flags_unannounced_and_mutated_walk(monkeypatch):
    import wormhole.index as index_mod
    from wormhole.keys import KeyRef
    from wormhole.metatrie import MetaTrieHT
    idx, det = _checked_index()
    table = idx.meta.current
    with det:
        # a walk from a thread that never announced a table version
        index_mod.search_trie_ht(table, KeyRef(b"\0\0\0\5"), idx.max_anchor_len)
        assert any("without announcing" in r for r in det.races)

        # a structural write landing in the middle of a walk
        real_get = MetaTrieHT.get
        fired = []

        def interfering_get(self, prefix, h):
            if self is table and not fired:
                fired.append(1)
                with idx.meta.lock:
                    self.set(TrieItem(b"zz", crc32c(b"zz")))
            return real_get(self, prefix, h)
        monkeypatch.setattr(MetaTrieHT, "get", interfering_get)
        rec = idx.registry.register()
        rec.seen = table.version
        index_mod.search_trie_ht(table, KeyRef(b"\0\0\0\5"), idx.max_anchor_len)
        rec.seen = None
    assert fired
    assert any("during a reader's walk" in r for r in det.races)
