import random

import pytest

from wormhole import LeafConfig, Wormhole
from wormhole.oracle import (
    DEL, GET, RANGE, SET, ModelMap, OpTrace, brute_target_node, check_invariants,
    differential_run, mixed_binary_keys, model_apply, shared_prefix_keys, uniform_keys,
    zero_suffix_keys,
)

from conftest import NAME_LEAVES, build_index


def test_model_examples():
    m = ModelMap()
    model_apply(m, (SET, b"k", b"v", 0))
    assert model_apply(m, (GET, b"k", None, 0)) == b"v"
    assert model_apply(m, (DEL, b"zz", None, 0)) is False
    for k in (b"c", b"a", b"b"):
        m.set(k, k)
    assert [k for k, _ in model_apply(m, (RANGE, b"", None, len(m)))] == [b"a", b"b", b"c", b"k"]
    assert m.range_ascending(b"b", 0) == []
    with pytest.raises(ValueError):
        model_apply(m, (b"X", b"", None, 0))


def test_trace_is_replayable():
    pool = uniform_keys(random.Random(1), 100)
    a = OpTrace.generate(42, 500, pool)
    b = OpTrace.generate(42, 500, pool)
    assert a.ops == b.ops
    assert {op[0] for op in a.ops} == {GET, SET, DEL, RANGE}
    with pytest.raises(ValueError):
        OpTrace.generate(1, 10, pool, mix=(50, 50, 50, 0))


def test_trace_binary_roundtrip(tmp_path):
    pool = mixed_binary_keys(random.Random(2), 50)
    t = OpTrace.generate(3, 400, pool)
    path = tmp_path / "t.bin"
    t.save(path)
    assert OpTrace.load(path).ops == t.ops
    raw = (SET + (3).to_bytes(4, "little") + b"a\0b" + (1).to_bytes(4, "little") + b"v"
           + RANGE + (0).to_bytes(4, "little") + (7).to_bytes(4, "little"))
    assert OpTrace.from_bytes(raw).ops == [(SET, b"a\0b", b"v", 0), (RANGE, b"", None, 7)]


def test_trace_parse_errors():
    data = OpTrace.generate(1, 20, [b"key"]).to_bytes()
    with pytest.raises(ValueError, match="record"):
        OpTrace.from_bytes(data[:-1])
    with pytest.raises(ValueError, match="bad opcode"):
        OpTrace.from_bytes(b"Q" + bytes(4))


def test_brute_target_node_names(names):
    leaves = list(names.leaves())
    assert brute_target_node(names.head, b"Denice") is leaves[1]
    assert brute_target_node(names.head, b"") is leaves[0]
    assert brute_target_node(names.head, b"A") is leaves[0]
    for leaf in leaves:
        assert brute_target_node(names.head, leaf.base) is leaf


@pytest.mark.parametrize("safe", [False, True])
def test_differential_uniform(safe):
    pool = uniform_keys(random.Random(5), 5000)
    rep = differential_run(OpTrace.generate(5, 20_000, pool), Wormhole(thread_safe=safe))
    assert rep.ok, str(rep)
    assert rep.checks == 20_000 // 256


def test_differential_zero_family_grows_fat():
    idx = Wormhole(LeafConfig(max_leaf_size=16))
    pool = zero_suffix_keys(32) + zero_suffix_keys(32, b"\x02")
    rep = differential_run(OpTrace.generate(1, 5000, pool, mix=(20, 70, 5, 5)), idx,
                           check_every=64)
    assert rep.ok, str(rep)
    assert idx.stats().fat_leaf_count >= 1


def test_differential_shared_prefix_anchor_length():
    idx = Wormhole(LeafConfig(max_leaf_size=16), thread_safe=False)
    pool = shared_prefix_keys(random.Random(4), 3000, prefix_len=60)
    rep = differential_run(OpTrace.generate(2, 20_000, pool, mix=(20, 70, 5, 5)), idx)
    assert rep.ok, str(rep)
    assert idx.stats().mean_anchor_len > 8


def test_differential_reports_divergence():
    class Liar(Wormhole):
        def __init__(self):
            super().__init__(thread_safe=False)
            real = self.get
            self.get = lambda k: b"lie" if k == b"x" else real(k)
    t = OpTrace(0, [(SET, b"a", b"1", 0), (GET, b"a", None, 0), (GET, b"x", None, 0)])
    rep = differential_run(t, Liar())
    assert not rep.ok and rep.op_index == 2
    assert rep.expected is None and rep.actual == b"lie"
    assert "op 2" in str(rep)


def _small_index():
    idx = Wormhole(LeafConfig(max_leaf_size=4), thread_safe=False)
    for i in range(40):
        idx.set(b"%03d" % i, i)
    assert check_invariants(idx) == []
    return idx


def test_invariants_catch_misplaced_key():
    idx = _small_index()
    leaves = list(idx.leaves())
    it = leaves[-1].items[0]
    leaves[0].items.append(it)
    leaves[0].hitems.append(it)
    leaves[0].tags.append(it.tag)
    assert any("not below next base" in e for e in check_invariants(idx))


def test_invariants_catch_bitmap_and_extremes():
    idx = _small_index()
    root = idx.table.lookup(b"")
    root.bitmap |= 1 << 200
    assert any("bitmap" in e for e in check_invariants(idx))
    root.bitmap &= ~(1 << 200)
    root.rightmost = idx.head
    assert any("extreme" in e for e in check_invariants(idx))


def test_invariants_catch_prefix_violation():
    idx = build_index(NAME_LEAVES)
    leaves = list(idx.leaves())
    leaves[3].anchor = b"Ja"  # now a prefix of "Jam"
    errs = check_invariants(idx)
    assert any("prefix of" in e for e in errs)


def test_invariants_catch_missing_prefix():
    idx = _small_index()
    victim = next(it for it in idx.table.items() if it.prefix and it.leaf is None)
    idx.table.remove(victim.prefix, victim.hash)
    assert any("missing item" in e for e in check_invariants(idx))


def test_invariants_catch_tag_disorder():
    idx = _small_index()
    leaf = max(idx.leaves(), key=lambda l: len(l.items))
    leaf.tags.reverse()
    leaf.hitems.reverse()
    assert any("tags not ascending" in e for e in check_invariants(idx))
