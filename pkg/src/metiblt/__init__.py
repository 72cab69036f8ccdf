"""Multi-edge-type invertible Bloom lookup tables and rate-compatible set reconciliation."""

from metiblt.config import ConfigError, MetConfig, load_config, save_config
from metiblt.hashing import FixtureHasher, Hasher
from metiblt.iblt import Cell, Iblt, KeyValuePair, PairBatch, recover

__all__ = [
    "Cell",
    "ConfigError",
    "FixtureHasher",
    "Hasher",
    "Iblt",
    "KeyValuePair",
    "MetConfig",
    "PairBatch",
    "load_config",
    "recover",
    "save_config",
]
