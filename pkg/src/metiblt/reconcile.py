"""Difference IBLTs and their inversion into a signed set difference."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from metiblt.config import MetConfig
from metiblt.hashing import Hasher, array_to_ints, ints_to_array, num_limbs
from metiblt.iblt import Cell, Iblt, KeyValuePair, peel


@dataclass(frozen=True)
class SignedDifference:
    """Pairs held only by B (inserted side) and only by A (deleted side)."""

    only_in_b: frozenset[KeyValuePair] = field(default_factory=frozenset)
    only_in_a: frozenset[KeyValuePair] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.only_in_a & self.only_in_b:
            raise ValueError("a pair cannot be on both sides of the difference")

    def __len__(self) -> int:
        return len(self.only_in_a) + len(self.only_in_b)

    def swapped(self) -> SignedDifference:
        return SignedDifference(self.only_in_a, self.only_in_b)


def subtract_cells(c_b: Cell, c_a: Cell) -> Cell:
    return Cell(c_b.count - c_a.count, c_b.key ^ c_a.key, c_b.value ^ c_a.value)


def is_pure(cell: Cell, hasher: Hasher) -> bool:
    """Count of +-1 and a key that matches its value."""
    return cell.count in (1, -1) and hasher.derive_key(cell.value) == cell.key


class DifferenceIblt:
    """Received prefix of ``B - A``; cells past ``received`` are erased."""

    def __init__(self, config: MetConfig, hasher: Hasher | None = None) -> None:
        self.config = config
        self.hasher = hasher if hasher is not None else Hasher(config)
        m = config.num_cells
        self.counts = np.zeros(m, dtype=np.int64)
        self.keys = np.zeros((m, num_limbs(config.nu)), dtype=np.uint64)
        self.values = np.zeros((m, num_limbs(config.kappa)), dtype=np.uint64)
        self.received = 0

    @classmethod
    def from_iblts(cls, iblt_b: Iblt, iblt_a: Iblt, received: int | None = None) -> DifferenceIblt:
        if iblt_b.config != iblt_a.config:
            raise ValueError("IBLTs were built with different configurations")
        out = cls(iblt_b.config, iblt_b.hasher)
        n = len(iblt_b) if received is None else received
        out.append_arrays(iblt_b.counts[:n] - iblt_a.counts[:n], iblt_b.keys[:n] ^ iblt_a.keys[:n],
                          iblt_b.values[:n] ^ iblt_a.values[:n])
        return out

    def append_arrays(self, counts: np.ndarray, keys: np.ndarray, values: np.ndarray) -> None:
        n = counts.shape[0]
        if self.received + n > self.counts.shape[0]:
            raise IndexError("more cells than the configuration holds")
        sl = slice(self.received, self.received + n)
        self.counts[sl] = counts
        self.keys[sl] = keys
        self.values[sl] = values
        self.received += n

    def append(self, cell: Cell) -> None:
        self.append_arrays(np.array([cell.count], dtype=np.int64),
                           ints_to_array([cell.key], self.keys.shape[1]),
                           ints_to_array([cell.value], self.values.shape[1]))

    def cell(self, index: int) -> Cell:
        if index >= self.received:
            raise IndexError(f"cell {index} has not been received")
        return Cell(int(self.counts[index]), array_to_ints(self.keys[index:index + 1])[0],
                    array_to_ints(self.values[index:index + 1])[0])


def modified_recover(d: DifferenceIblt) -> tuple[SignedDifference, bool]:
    """Peel pure cells of the received prefix.

    A count of +1 yields a pair only B holds (removed by deletion), -1 a pair
    only A holds (removed by insertion). Succeeds when the prefix ends all-zero.
    """
    if d.received < 1:
        raise ValueError("need at least one received cell")
    n = d.received
    result = peel(d.counts[:n].copy(), d.keys[:n].copy(), d.values[:n].copy(), d.hasher, n, signed=True)
    pairs = result.batch.pairs()
    only_b = frozenset(z for z, s in zip(pairs, result.signs) if s > 0)
    only_a = frozenset(z for z, s in zip(pairs, result.signs) if s < 0)
    if only_a & only_b:
        return SignedDifference(only_b - only_a, only_a - only_b), False
    return SignedDifference(only_b, only_a), result.success


def recovery_order(d: DifferenceIblt) -> list[tuple[KeyValuePair, int]]:
    """Pairs in the order :func:`modified_recover` peels them, with their sign."""
    n = d.received
    result = peel(d.counts[:n].copy(), d.keys[:n].copy(), d.values[:n].copy(), d.hasher, n, signed=True)
    return list(zip(result.batch.pairs(), (int(s) for s in result.signs)))


class StreamingDecoder:
    """Modified recovery that keeps its work between attempts.

    Cells arrive one at a time through :meth:`push`; :meth:`decode` peels
    whatever became pure since the last call. Pairs already recovered are
    subtracted from later cells as they arrive, so a decode after ``i`` pushes
    ends in the same state as :func:`modified_recover` on the ``i``-cell
    prefix (peeling is confluent).
    """

    def __init__(self, config: MetConfig, hasher: Hasher | None = None) -> None:
        self.config = config
        self.hasher = hasher if hasher is not None else Hasher(config)
        self.counts: list[int] = []
        self.keys: list[int] = []
        self.values: list[int] = []
        self.recovered: dict[tuple[int, int], int] = {}
        self.order: list[tuple[int, int]] = []
        self._pending: dict[int, list[tuple[int, int, int]]] = {}
        self._queue: deque[int] = deque()
        self._nonzero = 0
        self.consistent = True

    @property
    def received(self) -> int:
        return len(self.counts)

    def extend(self, config: MetConfig, hasher: Hasher | None = None) -> None:
        """Switch to a grown configuration; recovered pairs get their new cells queued."""
        old_cells = self.config.num_cells
        self.config = config
        self.hasher = hasher if hasher is not None else Hasher(config)
        for (key, value), sign in self.recovered.items():
            for c in self.hasher.index_vector(key):
                if c >= old_cells:
                    self._pending.setdefault(c, []).append((key, value, sign))

    def push(self, count: int, key: int, value: int) -> None:
        i = len(self.counts)
        for k, v, s in self._pending.pop(i, ()):
            count -= s
            key ^= k
            value ^= v
        self.counts.append(count)
        self.keys.append(key)
        self.values.append(value)
        if count or key or value:
            self._nonzero += 1
            self._queue.append(i)

    def _set(self, i: int, count: int, key: int, value: int) -> None:
        was = bool(self.counts[i] or self.keys[i] or self.values[i])
        now = bool(count or key or value)
        self._nonzero += now - was
        self.counts[i] = count
        self.keys[i] = key
        self.values[i] = value

    def decode(self) -> bool:
        """Peel to exhaustion; True when every received cell is empty."""
        if not self.consistent:
            self._queue.clear()
            return False
        derive = self.hasher.derive_key
        n = len(self.counts)
        while self._queue:
            i = self._queue.popleft()
            c = self.counts[i]
            if c not in (1, -1) or derive(self.values[i]) != self.keys[i]:
                continue
            key, value = self.keys[i], self.values[i]
            if (key, value) in self.recovered or len(self.recovered) >= n:
                self.consistent = False
                self._queue.clear()
                return False
            self.recovered[(key, value)] = c
            self.order.append((key, value))
            for j in self.hasher.index_vector(key):
                if j < n:
                    self._set(j, self.counts[j] - c, self.keys[j] ^ key, self.values[j] ^ value)
                    self._queue.append(j)
                else:
                    self._pending.setdefault(j, []).append((key, value, c))
        return self._nonzero == 0

    def difference(self) -> SignedDifference:
        only_b = frozenset(KeyValuePair(k, v) for (k, v), s in self.recovered.items() if s > 0)
        only_a = frozenset(KeyValuePair(k, v) for (k, v), s in self.recovered.items() if s < 0)
        return SignedDifference(only_b, only_a)
