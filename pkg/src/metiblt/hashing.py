"""Keyed 64-bit PRF and the three mappings built on it.

``derive_key`` (value -> key), ``assign_type`` (key -> data type) and
``map_cells`` (key, type -> cell indices) all go through one splitmix-style
PRF with a per-function tag, so both hosts derive identical mappings from the
configuration alone. Every scalar routine has a numpy twin operating on
``(N, limbs)`` uint64 arrays; the two must agree bit for bit.

Not cryptographic: adversarially chosen inputs are out of scope.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from metiblt.config import MetConfig

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB

TAG_KEY = 0x6B6579
TAG_TYPE = 0x747970
TAG_MAP = 0x6D6170


def num_limbs(bits: int) -> int:
    return (bits + 63) // 64


def _mix(x: int) -> int:
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def prf(seed: int, tag: int, *words: int) -> int:
    h = _mix(seed ^ ((tag * _GOLDEN) & MASK64))
    for w in words:
        h = _mix(h ^ w)
    return h


def _mix_vec(x: np.ndarray) -> np.ndarray:
    z = x + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
    return z ^ (z >> np.uint64(31))


def prf_vec(seed: int, tag: int, *words: np.ndarray | int) -> np.ndarray:
    """Vectorized :func:`prf`; ``words`` broadcast against each other."""
    size = 1
    for w in words:
        if isinstance(w, np.ndarray):
            size = max(size, w.shape[0])
    h = np.full(size, _mix(seed ^ ((tag * _GOLDEN) & MASK64)), dtype=np.uint64)
    for w in words:
        h = _mix_vec(h ^ np.asarray(w, dtype=np.uint64))
    return h


def int_to_limbs(x: int, limbs: int) -> list[int]:
    return [(x >> (64 * k)) & MASK64 for k in range(limbs)]


def ints_to_array(values: Iterable[int], limbs: int) -> np.ndarray:
    values = list(values)
    if limbs == 1:
        return np.array(values, dtype=np.uint64).reshape(len(values), 1)
    out = np.empty((len(values), limbs), dtype=np.uint64)
    for r, v in enumerate(values):
        out[r] = int_to_limbs(v, limbs)
    return out


def array_to_ints(arr: np.ndarray) -> list[int]:
    if arr.shape[1] == 1:
        return [int(v) for v in arr[:, 0]]
    return [sum(int(w) << (64 * k) for k, w in enumerate(row)) for row in arr]


def type_cutpoints(p: Sequence[float]) -> list[int]:
    """Upper edges of each type's slice of [0, 2^64), from the exact cumulative p.

    Type ``j`` owns ``[cut[j-1], cut[j])``. The last edge is 2^64.
    """
    total = sum(Fraction(x) for x in p)
    cuts = []
    acc = Fraction(0)
    for x in p[:-1]:
        acc += Fraction(x)
        cuts.append(min(math.floor(acc / total * 2**64), MASK64))
    cuts.append(2**64)
    return cuts


class Hasher:
    """Cell mapping for one configuration.

    Indices are 0-based and grouped ascending by cell type. Within a type,
    draws that repeat an earlier index are rejected and redrawn.
    """

    def __init__(self, config: MetConfig) -> None:
        self.config = config
        self.seed = config.seed
        self.key_limbs = num_limbs(config.nu)
        self.value_limbs = num_limbs(config.kappa)
        self._key_mask = (1 << config.nu) - 1
        self._cuts = type_cutpoints(config.p)
        self._cuts_arr = np.array(self._cuts[:-1], dtype=np.uint64)
        self._offsets = config.offsets
        self._columns = [config.column(j) for j in range(config.d_d)]
        for j, col in enumerate(self._columns):
            for i, a in enumerate(col):
                if a > config.m[i]:
                    raise ValueError(
                        f"data type {j} needs {a} distinct cells of type {i}, which has {config.m[i]}")
        self._index_cache: dict[int, tuple[int, ...]] = {}

    # scalar path

    def derive_key(self, value: int) -> int:
        words = int_to_limbs(value, self.value_limbs)
        key = 0
        for k in range(self.key_limbs):
            key |= prf(self.seed, TAG_KEY, k, *words) << (64 * k)
        return key & self._key_mask

    def assign_type(self, key: int) -> int:
        u = prf(self.seed, TAG_TYPE, *int_to_limbs(key, self.key_limbs))
        for j, cut in enumerate(self._cuts):
            if u < cut:
                return j
        raise AssertionError("unreachable")

    def map_cells(self, key: int, j: int) -> list[int]:
        words = int_to_limbs(key, self.key_limbs)
        out: list[int] = []
        for i, a in enumerate(self._columns[j]):
            mi = self.config.m[i]
            picks: list[int] = []
            ctr = 0
            while len(picks) < a:
                r = prf(self.seed, TAG_MAP, *words, i, ctr) % mi
                ctr += 1
                if r not in picks:
                    picks.append(r)
            out.extend(self._offsets[i] + r for r in picks)
        return out

    def index_vector(self, key: int) -> tuple[int, ...]:
        hit = self._index_cache.get(key)
        if hit is None:
            hit = tuple(self.map_cells(key, self.assign_type(key)))
            if len(self._index_cache) < 1 << 20:
                self._index_cache[key] = hit
        return hit

    def pair(self, value: int):
        from metiblt.iblt import KeyValuePair

        if not 0 <= value < 1 << self.config.kappa:
            raise ValueError(f"value does not fit in {self.config.kappa} bits")
        return KeyValuePair(self.derive_key(value), value)

    # vectorized path

    def derive_keys(self, values: np.ndarray) -> np.ndarray:
        words = [values[:, k] for k in range(values.shape[1])]
        out = np.empty((values.shape[0], self.key_limbs), dtype=np.uint64)
        for k in range(self.key_limbs):
            out[:, k] = prf_vec(self.seed, TAG_KEY, k, *words)
        top = self.config.nu - 64 * (self.key_limbs - 1)
        if top < 64:
            out[:, -1] &= np.uint64((1 << top) - 1)
        return out

    def assign_types(self, keys: np.ndarray) -> np.ndarray:
        u = prf_vec(self.seed, TAG_TYPE, *[keys[:, k] for k in range(keys.shape[1])])
        return np.searchsorted(self._cuts_arr, u, side="right")

    def edges(self, keys: np.ndarray, lo: int = 0, hi: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """All (pair row, cell index) incidences, restricted to cells in [lo, hi)."""
        hi = self._offsets[-1] if hi is None else hi
        n = keys.shape[0]
        types = self.assign_types(keys)
        words = [keys[:, k] for k in range(keys.shape[1])]
        rows_out: list[np.ndarray] = []
        cells_out: list[np.ndarray] = []
        for i in range(self.config.d_c):
            if self._offsets[i + 1] <= lo or self._offsets[i] >= hi:
                continue
            mi = self.config.m[i]
            degree = np.array([col[i] for col in self._columns], dtype=np.int64)[types]
            amax = int(degree.max()) if n else 0
            if amax == 0:
                continue
            picks = np.full((n, amax), -1, dtype=np.int64)
            ctr = np.zeros(n, dtype=np.uint64)
            for s in range(amax):
                need = np.nonzero(degree > s)[0]
                while need.size:
                    cand = (prf_vec(self.seed, TAG_MAP, *[w[need] for w in words], i, ctr[need])
                            % np.uint64(mi)).astype(np.int64)
                    ctr[need] += np.uint64(1)
                    picks[need, s] = cand
                    if s == 0:
                        break
                    dup = (picks[need, :s] == cand[:, None]).any(axis=1)
                    need = need[dup]
            mask = picks >= 0
            r, _ = np.nonzero(mask)
            cells = picks[mask] + self._offsets[i]
            keep = (cells >= lo) & (cells < hi)
            rows_out.append(r[keep])
            cells_out.append(cells[keep])
        if not rows_out:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty
        return np.concatenate(rows_out), np.concatenate(cells_out)


class FixtureHasher(Hasher):
    """Hasher with hand-picked index vectors, for replaying worked examples.

    ``mapping`` sends a value to its 0-based cell indices; keys still come from
    the real ``derive_key`` so purity checks behave normally.
    """

    def __init__(self, config: MetConfig, mapping: dict[int, Sequence[int]]) -> None:
        super().__init__(config)
        self._by_key = {self.derive_key(v): tuple(ix) for v, ix in mapping.items()}

    def assign_type(self, key: int) -> int:
        return 0

    def map_cells(self, key: int, j: int) -> list[int]:
        return list(self._by_key.get(key, ()))

    def index_vector(self, key: int) -> tuple[int, ...]:
        return self._by_key.get(key, ())

    def assign_types(self, keys: np.ndarray) -> np.ndarray:
        return np.zeros(keys.shape[0], dtype=np.int64)

    def edges(self, keys: np.ndarray, lo: int = 0, hi: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        hi = self._offsets[-1] if hi is None else hi
        rows, cells = [], []
        for r, key in enumerate(array_to_ints(keys)):
            for c in self.index_vector(key):
                if lo <= c < hi:
                    rows.append(r)
                    cells.append(c)
        return np.array(rows, dtype=np.int64), np.array(cells, dtype=np.int64)
