"""Wormhole: an ordered in-memory index with O(log L) point lookups."""
from .index import IndexStats, Wormhole
from .keys import KeyRef, compute_hash
from .leaf import LeafConfig

__all__ = ["Wormhole", "IndexStats", "LeafConfig", "KeyRef", "compute_hash"]
__version__ = "0.1.0"
