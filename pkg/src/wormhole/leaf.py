"""Leaf nodes of the LeafList.

A leaf keeps its items twice: ``items`` in key order (a sorted prefix of
length ``nsorted`` followed by an unsorted tail of recent inserts) and the
parallel ``tags``/``hitems`` arrays kept in ascending tag order for point
lookups.
"""
from __future__ import annotations

import heapq
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from operator import attrgetter

from .keys import common_prefix_len

_by_key = attrgetter("key")


class LeafFullError(Exception):
    """Insert into a full leaf that was not authorized to grow fat."""


@dataclass
class LeafConfig:
    max_leaf_size: int = 128
    merge_size: int | None = None
    sort_threshold: int | None = None

    def __post_init__(self) -> None:
        if self.merge_size is None:
            self.merge_size = math.ceil(0.75 * self.max_leaf_size)
        if self.sort_threshold is None:
            self.sort_threshold = max(1, self.max_leaf_size // 4)
        if not 2 <= self.merge_size <= self.max_leaf_size:
            raise ValueError(f"merge_size {self.merge_size} outside [2, {self.max_leaf_size}]")
        if self.sort_threshold < 1:
            raise ValueError("sort_threshold must be >= 1")


class LeafItem:
    __slots__ = ("key", "tag", "value")

    def __init__(self, key: bytes, tag: int, value) -> None:
        self.key = key
        self.tag = tag
        self.value = value

    def __repr__(self) -> str:
        return f"LeafItem({self.key!r}, tag=0x{self.tag:04x})"


class LeafNode:
    """``base`` is the anchor used for ordering; ``anchor`` is the key stored in
    the meta table, i.e. ``base`` followed by ``ext`` appended zero bytes."""

    __slots__ = (
        "base", "anchor", "items", "nsorted", "tags", "hitems",
        "left", "right", "expected_version", "fat", "dead", "lock", "__weakref__",
    )

    def __init__(self, base: bytes = b"", anchor: bytes | None = None) -> None:
        self.base = base
        self.anchor = base if anchor is None else anchor
        self.items: list[LeafItem] = []
        self.nsorted = 0
        self.tags: list[int] = []
        self.hitems: list[LeafItem] = []
        self.left: LeafNode | None = None
        self.right: LeafNode | None = None
        self.expected_version = 0
        self.fat = False
        self.dead = False
        self.lock = None

    @property
    def size(self) -> int:
        return len(self.items)

    @property
    def ext(self) -> int:
        return len(self.anchor) - len(self.base)

    def keys(self) -> list[bytes]:
        return [it.key for it in self.items]

    def __repr__(self) -> str:
        return f"<LeafNode base={self.base!r} anchor={self.anchor!r} size={len(self.items)}>"


def point_search_leaf(leaf: LeafNode, key: bytes, tag: int, counter: list | None = None) -> int:
    """Index of ``key`` in ``leaf.hitems``, or the insertion point after the
    run of equal tags.  The first probe is positioned by the tag value."""
    tags = leaf.tags
    n = len(tags)
    i = (tag * n) >> 16
    cmps = 0
    while i > 0:
        cmps += 1
        if tag <= tags[i - 1]:
            i -= 1
        else:
            break
    while i < n:
        cmps += 1
        if tag > tags[i]:
            i += 1
        else:
            break
    hitems = leaf.hitems
    while i < n:
        cmps += 1
        if tag != tags[i]:
            break
        if hitems[i].key == key:
            break
        i += 1
    if counter is not None:
        counter[0] += cmps
        counter[1] += 1
    return i


def inc_sort(leaf: LeafNode, threshold: int) -> None:
    items = leaf.items
    ns = leaf.nsorted
    if ns == len(items):
        return
    if ns < threshold:
        items.sort(key=_by_key)
    else:
        tail = sorted(items[ns:], key=_by_key)
        items[:] = heapq.merge(items[:ns], tail, key=_by_key)
    leaf.nsorted = len(items)


def leaf_insert(leaf: LeafNode, item: LeafItem, max_size: int,
                allow_fat: bool = False, pos: int | None = None) -> None:
    """Append ``item`` to the unsorted tail and place its tag.  ``pos`` is a
    tag-array insertion point from :func:`point_search_leaf` if known."""
    if len(leaf.items) >= max_size and not allow_fat:
        raise LeafFullError(f"leaf {leaf.base!r} holds {len(leaf.items)} items")
    if pos is None:
        pos = bisect_right(leaf.tags, item.tag)
    leaf.items.append(item)
    leaf.tags.insert(pos, item.tag)
    leaf.hitems.insert(pos, item)


def leaf_delete(leaf: LeafNode, i: int) -> LeafItem:
    if not 0 <= i < len(leaf.hitems):
        raise IndexError(f"hash-array index {i} out of range for size {len(leaf.hitems)}")
    item = leaf.hitems.pop(i)
    del leaf.tags[i]
    items = leaf.items
    p = items.index(item)
    if p < leaf.nsorted:
        del items[p]
        leaf.nsorted -= 1
    else:
        last = items.pop()
        if last is not item:
            items[p] = last
    return item


def compute_anchor(left_max: bytes, right_min: bytes) -> bytes:
    if not left_max < right_min:
        raise ValueError(f"anchor needs left_max < right_min, got {left_max!r} >= {right_min!r}")
    return right_min[: common_prefix_len(left_max, right_min) + 1]


def anchor_between(left_max: bytes, right_min: bytes, prev_base: bytes,
                   next_anchor: bytes | None) -> tuple[bytes, bytes] | None:
    """Anchor base and stored anchor for a cut between two adjacent keys, or
    None when no zero extension can keep both anchor conditions.

    ``prev_base`` is the base of the leaf being cut, ``next_anchor`` the stored
    anchor of its right neighbour.
    """
    base = compute_anchor(left_max, right_min)
    # Anchors of the form prev_base + zeros can never be separated from the
    # left anchor by appending more zeros.
    if base.startswith(prev_base) and not base[len(prev_base):].strip(b"\0"):
        return None
    anchor = base
    if next_anchor is not None and next_anchor.startswith(base):
        rest = next_anchor[len(base):]
        zeros = len(rest) - len(rest.lstrip(b"\0"))
        if zeros == len(rest):
            return None
        anchor = base + b"\0" * (zeros + 1)
    return base, anchor


def split_candidates(size: int):
    mid = size // 2
    yield mid
    for d in range(1, size):
        if mid + d <= size - 1:
            yield mid + d
        if mid - d >= 1:
            yield mid - d
        if mid + d > size - 1 and mid - d < 1:
            return


def choose_split_point(leaf: LeafNode, prev_base: bytes,
                       next_anchor: bytes | None) -> tuple[int, bytes, bytes] | None:
    """First cut position (midpoint, then alternating outward) that admits a
    legal anchor, as ``(i, base, anchor)``; None means the leaf must grow fat.
    Requires a fully sorted leaf."""
    items = leaf.items
    if leaf.nsorted != len(items):
        raise ValueError("choose_split_point needs a sorted leaf")
    for i in split_candidates(len(items)):
        got = anchor_between(items[i - 1].key, items[i].key, prev_base, next_anchor)
        if got is not None:
            return i, got[0], got[1]
    return None


def rebuild_tag_arrays(leaf: LeafNode) -> None:
    pairs = sorted(leaf.items, key=attrgetter("tag"))
    leaf.hitems = pairs
    leaf.tags = [it.tag for it in pairs]


def search_greater_equal(leaf: LeafNode, key: bytes) -> int:
    """First position in the (sorted) key array holding a key >= ``key``."""
    return bisect_left(leaf.items, key, key=_by_key)
