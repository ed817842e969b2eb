import pytest

from wormhole import Wormhole
from wormhole.concurrency import RWLock
from wormhole.keys import crc32c
from wormhole.leaf import LeafItem, LeafNode, anchor_between, leaf_insert, inc_sort
from wormhole.metatrie import trie_insert_anchor

NAME_LEAVES = [
    [b"Aaron", b"Abbe", b"Andrew"],
    [b"Austin", b"Denice", b"Jacob"],
    [b"James", b"Jason", b"John"],
    [b"Joseph", b"Julian", b"Justin"],
]


def build_index(groups, thread_safe=False, config=None):
    """Index whose leaves hold exactly ``groups`` (each sorted, groups in
    ascending order), with anchors derived the way splits derive them."""
    idx = Wormhole(config=config, thread_safe=thread_safe)
    tables = [idx.meta.current, idx.meta.mirror] if thread_safe else [idx.table]
    tail = idx.head
    for n, keys in enumerate(groups):
        if n:
            got = anchor_between(groups[n - 1][-1], keys[0], tail.base, None)
            assert got is not None
            leaf = LeafNode(*got)
            if thread_safe:
                leaf.lock = RWLock()
            leaf.left, tail.right = tail, leaf
            for t in tables:
                trie_insert_anchor(t, leaf)
            idx.max_anchor_len = max(idx.max_anchor_len, len(leaf.anchor))
            tail = leaf
        for k in keys:
            leaf_insert(tail, LeafItem(k, crc32c(k) & 0xFFFF, b"v:" + k), 1 << 30)
        inc_sort(tail, 1)
    return idx


@pytest.fixture
def names():
    return build_index(NAME_LEAVES)


# -- acceptance reporting ----------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
