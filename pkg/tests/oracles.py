"""Independent reference implementations used to check the library."""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np


def hypergraph_peel(edges: dict[object, tuple[int, ...]]) -> tuple[set, bool]:
    """Textbook peeling on an explicit hypergraph.

    ``edges`` maps each data node to the cells it touches. Repeatedly picks a
    cell with exactly one remaining neighbour and removes that neighbour.
    Returns the removed nodes and whether every node was removed.
    """
    neighbours: dict[int, set] = defaultdict(set)
    for z, cells in edges.items():
        for c in cells:
            neighbours[c].add(z)
    removed: set = set()
    progress = True
    while progress:
        progress = False
        for c in sorted(neighbours):
            if len(neighbours[c]) == 1:
                (z,) = neighbours[c]
                removed.add(z)
                for d in edges[z]:
                    neighbours[d].discard(z)
                progress = True
    return removed, len(removed) == len(edges)


def exact_miss_probability(m: int, h: int, k: int) -> float:
    """P(a pair's k distinct cells all avoid the first h of m), sampling without replacement."""
    if h + k > m:
        return 0.0
    return math.prod((m - h - t) / (m - t) for t in range(k))


def birthday_collision_probability(n: int, bits: int) -> float:
    space = 2.0**bits
    return 1.0 - math.exp(-n * (n - 1) / (2 * space))


def lt_fixed_point(eta: float, k: int, iterations: int) -> float:
    """Single cell type, every pair in k cells: scalar DE for the cell erasure q."""
    q = 1.0
    for _ in range(iterations):
        q = 1.0 - math.exp(-eta * k * q ** (k - 1))
    return q


def cell_sum(values: list[int], keys: list[int], signs: list[int]) -> tuple[int, int, int]:
    count, key, value = 0, 0, 0
    for v, x, s in zip(values, keys, signs):
        count += s
        key ^= x
        value ^= v
    return count, key, value


def random_values(rng: np.random.Generator, n: int, bits: int = 32) -> list[int]:
    return [int(v) for v in rng.choice(2**bits, size=n, replace=False)]


def false_pure_rate(hasher, n: int, rng: np.random.Generator, pairs_per_cell: int = 3,
                    chunk: int = 1_000_000) -> tuple[int, int]:
    """Build ``n`` impure cells (odd number of random pairs, so count is +-1 possible)
    and count how many pass the key check. Returns (passed, n)."""
    passed = 0
    done = 0
    while done < n:
        size = min(chunk, n - done)
        values = rng.integers(0, 2**32, size=(size, pairs_per_cell), dtype=np.uint64)
        key = np.zeros((size, hasher.key_limbs), dtype=np.uint64)
        value = np.zeros(size, dtype=np.uint64)
        for t in range(pairs_per_cell):
            key ^= hasher.derive_keys(values[:, t:t + 1])
            value ^= values[:, t]
        passed += int((hasher.derive_keys(value.reshape(size, 1)) == key).all(axis=1).sum())
        done += size
    return passed, n
