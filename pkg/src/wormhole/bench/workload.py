"""Workload driver: load/lookup/mixed/range runs against one shared index."""
from __future__ import annotations

import os
import random
import sys
from array import array
import threading
import time
from dataclasses import asdict, dataclass, field

from ..index import Wormhole
from ..oracle import ModelMap
from .baselines import OpenHashMap
from .keyset import load_keyset

MODES = ("load", "lookup", "mixed", "range")
TARGETS = ("wormhole", "ordered", "hash")
OP_GET, OP_SET, OP_RANGE = 0, 1, 2
LATENCY_SAMPLE = 16  # time one op in every 16


class WorkloadError(ValueError):
    pass


@dataclass
class WorkloadSpec:
    lookup_pct: int = 100
    insert_pct: int = 0
    range_pct: int = 0
    range_len: int = 100
    threads: int = 1
    ops: int = 1_000_000
    seed: int = 1

    def validate(self) -> None:
        pcts = (self.lookup_pct, self.insert_pct, self.range_pct)
        if min(pcts) < 0 or sum(pcts) != 100:
            raise WorkloadError(f"op percentages must be non-negative and sum to 100, got {pcts}")
        if self.threads < 1:
            raise WorkloadError("threads must be >= 1")
        if self.ops < 0 or self.range_len < 0:
            raise WorkloadError("ops and range length must be non-negative")


@dataclass
class RunReport:
    label: str
    target: str
    build: str
    mode: str
    threads: int
    ops: int
    elapsed_s: float
    mops: float
    per_thread_mops: list[float]
    p50_us: float
    p99_us: float
    key_count: int
    expected_key_count: int
    failed_ops: int
    index_bytes: int
    meta_bytes: int
    mirror_bytes: int
    leaf_bytes: int
    rss_delta_bytes: int
    memory_sane: bool
    splits: int
    merges: int
    lpm_restarts: int
    version_restarts: int
    mean_anchor_len: float
    probe_histogram: dict[int, int]
    mix: dict[str, int]
    range_len: int
    seed: int
    range_start: str = "uniform over keyset"
    ok: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def resident_bytes() -> int:
    """Process resident set size from /proc; 0 where unavailable."""
    try:
        with open("/proc/self/statm") as f:
            return int(f.read().split()[1]) * os.sysconf("SC_PAGE_SIZE")
    except (OSError, ValueError, IndexError):
        return 0


def payload(i: int) -> bytes:
    return i.to_bytes(8, "little")


def make_target(target: str, unsafe: bool):
    if target == "wormhole":
        return Wormhole(thread_safe=not unsafe)
    if target == "ordered":
        return ModelMap()
    if target == "hash":
        return OpenHashMap()
    raise WorkloadError(f"unknown target {target!r}")


@dataclass
class _Worker:
    codes: bytes
    picks: array
    latencies: list[int] = field(default_factory=list)
    failed: int = 0
    start: float = 0.0
    end: float = 0.0
    error: BaseException | None = None


def _build_streams(mode: str, spec: WorkloadSpec, n_keys: int, loaded: int):
    """Per-thread op streams as (opcode bytes, key-index array), drawn before
    timing and kept compact so they barely register in the resident size."""
    T = spec.threads
    if mode == "load":
        n = min(spec.ops, n_keys)
        return [(bytes([OP_SET]) * len(range(t, n, T)), array("q", range(t, n, T))) for t in range(T)]
    if mode == "lookup":
        weights = (100, 0, 0)
    elif mode == "range":
        weights = (0, 0, 100)
    else:
        weights = (spec.lookup_pct, spec.insert_pct, spec.range_pct)
    streams = []
    for t in range(T):
        rng = random.Random(spec.seed * 1_000_003 + t)
        n = spec.ops // T + (t < spec.ops % T)
        codes = rng.choices((OP_GET, OP_SET, OP_RANGE), weights=weights, k=n)
        if mode == "mixed":
            # inserts go to the unloaded half, reads span the whole keyset
            pick = [rng.randrange(loaded, n_keys) if c == OP_SET and loaded < n_keys
                    else rng.randrange(n_keys) for c in codes]
        else:
            pick = [rng.randrange(n_keys) for _ in codes]
        streams.append((bytes(codes), array("q", pick)))
    return streams


def _run_stream(index, keys: list[bytes], w: _Worker, loaded: int, range_len: int,
                barrier: threading.Barrier | None, register: bool) -> None:
    rec = None
    try:
        if register:
            rec = index.register()
        if barrier is not None:
            barrier.wait()
        get, put, scan = index.get, index.set, index.range_ascending
        lat = w.latencies
        now = time.perf_counter_ns
        failed = 0
        w.start = time.perf_counter()
        for n, (code, i) in enumerate(zip(w.codes, w.picks)):
            sample = not n % LATENCY_SAMPLE
            if sample:
                t0 = now()
            k = keys[i]
            if code == OP_GET:
                v = get(k)
                if v is None:
                    if i < loaded:
                        failed += 1
                elif v != payload(i):
                    failed += 1
            elif code == OP_SET:
                put(k, payload(i))
            else:
                res = scan(k, range_len)
                if len(res) > range_len:
                    failed += 1
                elif res:
                    prev = res[0][0]
                    if prev < k or (i < loaded and prev != k):
                        failed += 1
                    for kk, _ in res[1:]:
                        if kk <= prev:
                            failed += 1
                            break
                        prev = kk
            if sample:
                lat.append(now() - t0)
        w.end = time.perf_counter()
        w.failed = failed
    except BaseException as exc:  # surfaced by the driver
        w.error = exc
        if barrier is not None:
            barrier.abort()
    finally:
        if rec is not None:
            index.unregister()


def _percentile(sorted_ns: list[int], q: float) -> float:
    if not sorted_ns:
        return 0.0
    i = min(len(sorted_ns) - 1, int(q * len(sorted_ns)))
    return sorted_ns[i] / 1000.0


def run_workload(keyset, spec: WorkloadSpec, mode: str, target: str = "wormhole",
                 unsafe: bool = False, label: str | None = None,
                 log: list | None = None) -> RunReport:
    """Run one benchmark.  ``keyset`` is a keyset file path or a key list.

    ``log``, when given, receives the per-thread op streams.
    """
    spec.validate()
    if mode not in MODES:
        raise WorkloadError(f"unknown mode {mode!r}")
    if target != "wormhole" and spec.threads > 1:
        raise WorkloadError(f"the {target} baseline is single-threaded")
    if unsafe and spec.threads > 1:
        raise WorkloadError("the unsafe build supports a single thread only")
    if target == "hash" and (mode == "range" or (mode == "mixed" and spec.range_pct)):
        raise WorkloadError("the hash baseline cannot run range scans")

    rss0 = resident_bytes()
    keys = load_keyset(keyset) if not isinstance(keyset, list) else keyset
    if not keys and mode != "load":
        raise WorkloadError("empty keyset")
    index = make_target(target, unsafe)
    loaded = {"load": 0, "mixed": len(keys) // 2}.get(mode, len(keys))
    if target == "ordered" and mode != "load":
        order = sorted(range(loaded), key=keys.__getitem__)
        index = ModelMap.from_sorted((keys[i], payload(i)) for i in order)
    else:
        put = index.set
        for i in range(loaded):
            put(keys[i], payload(i))
    rss_loaded = resident_bytes()

    streams = _build_streams(mode, spec, len(keys), loaded)
    if log is not None:
        log.extend(list(zip(c, p)) for c, p in streams)
    workers = [_Worker(c, p) for c, p in streams]
    rss_run = resident_bytes()
    safe = target == "wormhole" and not unsafe
    if spec.threads == 1:
        _run_stream(index, keys, workers[0], loaded, spec.range_len, None, False)
    else:
        barrier = threading.Barrier(spec.threads)
        threads = [threading.Thread(target=_run_stream, name=f"bench-{t}",
                                    args=(index, keys, w, loaded, spec.range_len, barrier, safe))
                   for t, w in enumerate(workers)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
    for w in workers:
        if w.error is not None and not isinstance(w.error, threading.BrokenBarrierError):
            raise w.error
    rss_end = resident_bytes()

    total_ops = sum(len(w.codes) for w in workers)
    started = min((w.start for w in workers if w.codes), default=0.0)
    ended = max((w.end for w in workers if w.codes), default=0.0)
    elapsed = max(ended - started, 1e-9)
    lat = sorted(x for w in workers for x in w.latencies)
    per_thread = [len(w.codes) / max(w.end - w.start, 1e-9) / 1e6 if w.codes else 0.0
                  for w in workers]

    inserted = set(range(loaded))
    for codes, picks in streams:
        inserted.update(i for code, i in zip(codes, picks) if code == OP_SET)
    expected = len(inserted) if mode != "load" else min(spec.ops, len(keys))
    count = len(index)
    failed = sum(w.failed for w in workers)

    if target == "wormhole":
        st = index.stats()
        meta, mirror, leaf = st.meta_bytes, st.mirror_bytes, st.leaf_bytes
        extra = dict(splits=st.splits, merges=st.merges, lpm_restarts=st.lpm_restarts,
                     version_restarts=st.version_restarts, mean_anchor_len=st.mean_anchor_len,
                     probe_histogram=st.probe_histogram)
    else:
        meta = mirror = 0
        leaf = _baseline_bytes(index)
        extra = dict(splits=0, merges=0, lpm_restarts=0, version_restarts=0,
                     mean_anchor_len=0.0, probe_histogram={})
    # growth while loading plus growth during the run, excluding the op streams
    rss_delta = max(0, rss_loaded - rss0) + max(0, rss_end - rss_run)
    build = "baseline" if target != "wormhole" else ("unsafe" if unsafe else "safe")
    report = RunReport(
        label=label or f"{target}-{build}-{mode}-t{spec.threads}",
        target=target, build=build, mode=mode, threads=spec.threads, ops=total_ops,
        elapsed_s=elapsed, mops=total_ops / elapsed / 1e6, per_thread_mops=per_thread,
        p50_us=_percentile(lat, 0.50), p99_us=_percentile(lat, 0.99),
        key_count=count, expected_key_count=expected, failed_ops=failed,
        index_bytes=meta + leaf, meta_bytes=meta, mirror_bytes=mirror, leaf_bytes=leaf,
        rss_delta_bytes=rss_delta, memory_sane=(meta + leaf <= rss_delta) if rss_delta else True,
        mix=_mix(mode, spec), range_len=spec.range_len, seed=spec.seed, **extra,
    )
    report.ok = failed == 0 and count == expected
    return report


def _mix(mode: str, spec: WorkloadSpec) -> dict[str, int]:
    if mode == "mixed":
        return {"lookup": spec.lookup_pct, "insert": spec.insert_pct, "range": spec.range_pct}
    return {"load": {"insert": 100}, "lookup": {"lookup": 100}, "range": {"range": 100}}[mode]


def _baseline_bytes(m) -> int:
    size = sys.getsizeof
    if isinstance(m, ModelMap):
        total = size(m.keys) + size(m.values)
        return total + sum(size(k) for k in m.keys) + sum(size(v) for v in m.values)
    total = size(m._keys) + size(m._vals)
    return total + sum(size(k) for k in m._keys if isinstance(k, bytes)) + sum(
        size(v) for v in m._vals if v is not None)
