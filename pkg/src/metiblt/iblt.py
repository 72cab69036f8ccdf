"""MET IBLT: cell array, insertion/deletion, peeling recovery and cell codec."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from metiblt.config import MetConfig
from metiblt.hashing import Hasher, array_to_ints, int_to_limbs, ints_to_array, num_limbs

COUNT_LIMIT = 2**31


@dataclass(frozen=True)
class KeyValuePair:
    key: int
    value: int


@dataclass(frozen=True)
class Cell:
    count: int = 0
    key: int = 0
    value: int = 0

    def is_zero(self) -> bool:
        return self.count == 0 and self.key == 0 and self.value == 0


class PairBatch:
    """Column-wise view of many pairs as uint64 limb arrays."""

    __slots__ = ("keys", "values")

    def __init__(self, keys: np.ndarray, values: np.ndarray) -> None:
        self.keys = keys
        self.values = values

    def __len__(self) -> int:
        return self.keys.shape[0]

    @classmethod
    def from_values(cls, values: np.ndarray | Sequence[int], hasher: Hasher) -> PairBatch:
        if isinstance(values, np.ndarray) and values.dtype == np.uint64:
            vals = values.reshape(len(values), -1)
        else:
            vals = ints_to_array(values, hasher.value_limbs)
        return cls(hasher.derive_keys(vals), vals)

    @classmethod
    def from_pairs(cls, pairs: Iterable[KeyValuePair], hasher: Hasher) -> PairBatch:
        pairs = list(pairs)
        return cls(ints_to_array((z.key for z in pairs), hasher.key_limbs),
                   ints_to_array((z.value for z in pairs), hasher.value_limbs))

    def pairs(self) -> list[KeyValuePair]:
        return [KeyValuePair(k, v) for k, v in zip(array_to_ints(self.keys), array_to_ints(self.values))]


class Iblt:
    """Array of ``config.num_cells`` cells, stored column-wise.

    ``counts`` is int64; ``keys``/``values`` hold each field as little-endian
    64-bit limbs. Single writer; no internal locking.
    """

    def __init__(self, config: MetConfig, hasher: Hasher | None = None) -> None:
        self.config = config
        self.hasher = hasher if hasher is not None else Hasher(config)
        m = config.num_cells
        self.counts = np.zeros(m, dtype=np.int64)
        self.keys = np.zeros((m, num_limbs(config.nu)), dtype=np.uint64)
        self.values = np.zeros((m, num_limbs(config.kappa)), dtype=np.uint64)

    def __len__(self) -> int:
        return self.counts.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Iblt):
            return NotImplemented
        return (self.config == other.config and np.array_equal(self.counts, other.counts)
                and np.array_equal(self.keys, other.keys) and np.array_equal(self.values, other.values))

    def copy(self) -> Iblt:
        out = Iblt.__new__(Iblt)
        out.config = self.config
        out.hasher = self.hasher
        out.counts = self.counts.copy()
        out.keys = self.keys.copy()
        out.values = self.values.copy()
        return out

    def cell(self, index: int) -> Cell:
        return Cell(int(self.counts[index]),
                    array_to_ints(self.keys[index:index + 1])[0],
                    array_to_ints(self.values[index:index + 1])[0])

    @property
    def cells(self) -> list[Cell]:
        return [self.cell(i) for i in range(len(self))]

    def is_empty(self) -> bool:
        return not (self.counts.any() or self.keys.any() or self.values.any())

    def _toggle(self, z: KeyValuePair, sign: int) -> None:
        idx = np.fromiter(self.hasher.index_vector(z.key), dtype=np.int64)
        if idx.size == 0:
            return
        self.counts[idx] += sign
        self.keys[idx] ^= np.array(int_to_limbs(z.key, self.keys.shape[1]), dtype=np.uint64)
        self.values[idx] ^= np.array(int_to_limbs(z.value, self.values.shape[1]), dtype=np.uint64)

    def insert(self, z: KeyValuePair) -> None:
        self._toggle(z, +1)

    def delete(self, z: KeyValuePair) -> None:
        self._toggle(z, -1)

    def insert_batch(self, batch: PairBatch, sign: int = 1, lo: int = 0, hi: int | None = None) -> None:
        """Insert (``sign=+1``) or delete (``-1``) many pairs, touching only cells in [lo, hi)."""
        rows, cells = self.hasher.edges(batch.keys, lo, hi)
        apply_edges(self.counts, self.keys, self.values, batch, rows, cells, np.int64(sign))

    def insert_values(self, values: np.ndarray | Sequence[int]) -> PairBatch:
        batch = PairBatch.from_values(values, self.hasher)
        self.insert_batch(batch)
        return batch

    def extend(self, extra_types: int) -> None:
        """Grow the configuration by ``extra_types`` cell types; new cells are zero."""
        config = self.config.extended(extra_types)
        if config is self.config:
            return
        if type(self.hasher) is not Hasher:
            raise TypeError(f"cannot extend a configuration mapped by {type(self.hasher).__name__}")
        self.hasher = Hasher(config)
        extra = config.num_cells - len(self)
        self.config = config
        self.counts = np.concatenate([self.counts, np.zeros(extra, dtype=np.int64)])
        self.keys = np.concatenate([self.keys, np.zeros((extra, self.keys.shape[1]), dtype=np.uint64)])
        self.values = np.concatenate([self.values, np.zeros((extra, self.values.shape[1]), dtype=np.uint64)])

    def to_bytes(self, lo: int = 0, hi: int | None = None) -> bytes:
        hi = len(self) if hi is None else hi
        return encode_cells(self.counts[lo:hi], self.keys[lo:hi], self.values[lo:hi],
                            self.config.nu, self.config.kappa)


def apply_edges(counts: np.ndarray, keys: np.ndarray, values: np.ndarray, batch: PairBatch,
                rows: np.ndarray, cells: np.ndarray, signs: np.ndarray | np.int64) -> None:
    """Add ``signs`` to the count and XOR the pair into the data of every edge."""
    if rows.size == 0:
        return
    if np.ndim(signs):
        np.add.at(counts, cells, signs[rows])
    else:
        np.add.at(counts, cells, np.full(rows.size, signs, dtype=np.int64))
    for k in range(keys.shape[1]):
        np.bitwise_xor.at(keys[:, k], cells, batch.keys[rows, k])
    for k in range(values.shape[1]):
        np.bitwise_xor.at(values[:, k], cells, batch.values[rows, k])


@dataclass
class PeelResult:
    batch: PairBatch
    signs: np.ndarray
    success: bool
    consistent: bool = True


def peel(counts: np.ndarray, keys: np.ndarray, values: np.ndarray, hasher: Hasher,
         limit: int, signed: bool) -> PeelResult:
    """Round-based peeling on cell arrays, mutated in place.

    Each round removes every pair found in a candidate cell at the start of the
    round; candidates for the next round are the cells those removals touched.
    Unsigned mode looks for ``count == 1`` (standard recovery); signed mode
    looks for ``count == +-1`` plus a key check (modified recovery). Cells at
    index ``>= limit`` are treated as erased and never read or written.
    """
    found_keys: list[np.ndarray] = []
    found_values: list[np.ndarray] = []
    found_signs: list[np.ndarray] = []
    seen: set[tuple[int, int]] = set()
    total = 0
    consistent = True
    candidates = np.arange(limit, dtype=np.int64)
    while candidates.size:
        cnt = counts[candidates]
        hit = candidates[np.abs(cnt) == 1] if signed else candidates[cnt == 1]
        if hit.size and signed:
            hit = hit[(hasher.derive_keys(values[hit]) == keys[hit]).all(axis=1)]
        if hit.size == 0:
            break
        sig = np.concatenate([keys[hit], values[hit], counts[hit].astype(np.uint64)[:, None]], axis=1)
        _, first = np.unique(sig, axis=0, return_index=True)
        hit = hit[np.sort(first)]
        batch = PairBatch(keys[hit].copy(), values[hit].copy())
        signs = counts[hit].copy()
        for pair in zip(array_to_ints(batch.keys), array_to_ints(batch.values)):
            if pair in seen:
                consistent = False
            seen.add(pair)
        total += hit.size
        if not consistent or total > limit:
            # a false-pure pair came back around, or more pairs than cells: corrupted
            consistent = False
            break
        found_keys.append(batch.keys)
        found_values.append(batch.values)
        found_signs.append(signs)
        rows, cells = hasher.edges(batch.keys, 0, limit)
        apply_edges(counts, keys, values, batch, rows, cells, -signs)
        candidates = np.unique(cells)
    if found_keys:
        out = PairBatch(np.concatenate(found_keys), np.concatenate(found_values))
        out_signs = np.concatenate(found_signs)
    else:
        out = PairBatch(np.zeros((0, keys.shape[1]), np.uint64), np.zeros((0, values.shape[1]), np.uint64))
        out_signs = np.zeros(0, dtype=np.int64)
    if signed:
        clean = not (counts[:limit].any() or keys[:limit].any() or values[:limit].any())
    else:
        clean = not counts[:limit].any()
    return PeelResult(out, out_signs, consistent and clean, consistent)


def recover(iblt: Iblt) -> tuple[list[KeyValuePair], bool]:
    """List the stored pairs by repeatedly peeling cells with count 1.

    Leaves ``iblt`` untouched. On failure, returns the pairs peeled before the
    process stalled.
    """
    result = peel(iblt.counts.copy(), iblt.keys.copy(), iblt.values.copy(), iblt.hasher,
                  len(iblt), signed=False)
    return result.batch.pairs(), result.success


def recover_count(iblt: Iblt) -> tuple[int, bool]:
    """Like :func:`recover` but only counts pairs; avoids building Python objects."""
    result = peel(iblt.counts.copy(), iblt.keys.copy(), iblt.values.copy(), iblt.hasher,
                  len(iblt), signed=False)
    return len(result.batch), result.success


# cell codec: per cell, int32 count, then key and value bytes, all little-endian

def encode_cells(counts: np.ndarray, keys: np.ndarray, values: np.ndarray, nu: int, kappa: int) -> bytes:
    n = counts.shape[0]
    if n and np.abs(counts).max() >= COUNT_LIMIT:
        raise OverflowError("cell count does not fit in 32 bits")
    parts = [
        counts.astype("<i4").view(np.uint8).reshape(n, 4),
        np.ascontiguousarray(keys.astype("<u8")).view(np.uint8).reshape(n, -1)[:, : nu // 8],
        np.ascontiguousarray(values.astype("<u8")).view(np.uint8).reshape(n, -1)[:, : kappa // 8],
    ]
    return np.concatenate(parts, axis=1).tobytes()


def _unpack_field(raw: np.ndarray, limbs: int) -> np.ndarray:
    n, width = raw.shape
    padded = np.zeros((n, 8 * limbs), dtype=np.uint8)
    padded[:, :width] = raw
    return padded.view("<u8").astype(np.uint64).reshape(n, limbs)


def decode_cells(data: bytes, nu: int, kappa: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    size = 4 + nu // 8 + kappa // 8
    if len(data) % size:
        raise ValueError(f"payload of {len(data)} bytes is not a whole number of {size}-byte cells")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, size)
    counts = raw[:, :4].copy().view("<i4").astype(np.int64).reshape(-1)
    keys = _unpack_field(raw[:, 4 : 4 + nu // 8], num_limbs(nu))
    values = _unpack_field(raw[:, 4 + nu // 8 :], num_limbs(kappa))
    return counts, keys, values


def encode_cell(cell: Cell, nu: int, kappa: int) -> bytes:
    return encode_cells(np.array([cell.count], dtype=np.int64),
                        ints_to_array([cell.key], num_limbs(nu)),
                        ints_to_array([cell.value], num_limbs(kappa)), nu, kappa)


def decode_cell(data: bytes, nu: int, kappa: int) -> Cell:
    counts, keys, values = decode_cells(data, nu, kappa)
    if counts.shape[0] != 1:
        raise ValueError("expected exactly one cell")
    return Cell(int(counts[0]), array_to_ints(keys)[0], array_to_ints(values)[0])
