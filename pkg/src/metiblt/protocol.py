"""Rate-compatible reconciliation between two hosts.

Host A streams cells of its IBLT in packets of ``h`` cells; host B subtracts
each from its own cell, and at every decoding point (once at least ``m_1``
cells are in) runs modified recovery. Success is acknowledged; silence is an
implicit NACK and A keeps sending. B reports failure after the last cell.

Wire format, every message: 1-byte tag, 4-byte little-endian payload length,
payload. HELLO carries the 8-byte configuration digest, CELLS a whole number
of encoded cells, ACK and FAIL nothing.
"""

from __future__ import annotations

import enum
import socket
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from metiblt.config import MetConfig
from metiblt.hashing import Hasher, array_to_ints
from metiblt.iblt import Iblt, KeyValuePair, PairBatch, decode_cells
from metiblt.reconcile import SignedDifference, StreamingDecoder

HEADER = struct.Struct("<BI")
HEADER_SIZE = HEADER.size
DIGEST_SIZE = 8


class Tag(enum.IntEnum):
    HELLO = 0
    CELLS = 1
    ACK = 2
    FAIL = 3


class ProtocolError(RuntimeError):
    pass


class ConfigMismatchError(ProtocolError):
    """The peers do not share the same ensemble configuration."""


@dataclass(frozen=True)
class Message:
    tag: Tag
    payload: bytes = b""

    def encode(self) -> bytes:
        return HEADER.pack(int(self.tag), len(self.payload)) + self.payload

    @property
    def size(self) -> int:
        return HEADER_SIZE + len(self.payload)


class FrameReader:
    """Reassembles messages from an arbitrary chunking of the byte stream."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf += data
        out = []
        while len(self._buf) >= HEADER_SIZE:
            tag, length = HEADER.unpack_from(self._buf)
            if len(self._buf) < HEADER_SIZE + length:
                break
            try:
                t = Tag(tag)
            except ValueError:
                raise ProtocolError(f"unknown message tag {tag}") from None
            out.append(Message(t, bytes(self._buf[HEADER_SIZE:HEADER_SIZE + length])))
            del self._buf[:HEADER_SIZE + length]
        return out


def decode_message(data: bytes) -> Message:
    reader = FrameReader()
    msgs = reader.feed(data)
    if len(msgs) != 1 or reader._buf:
        raise ProtocolError("expected exactly one framed message")
    return msgs[0]


# schedules

def _validate_points(points: Sequence[int], what: str) -> tuple[int, ...]:
    pts = tuple(int(x) for x in points)
    if any(x <= 0 for x in pts):
        raise ValueError(f"{what} index vector must be positive")
    if any(b <= a for a, b in zip(pts, pts[1:])):
        raise ValueError(f"{what} index vector must be strictly increasing")
    return pts


def schedule(encoding: Sequence[int], decoding: Sequence[int]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Validate encoding and decoding index vectors (the leading 0 is implicit)."""
    return _validate_points(encoding, "encoding"), _validate_points(decoding, "decoding")


class DecodePlan:
    """Cell counts at which B attempts recovery.

    Explicit points first; after the last one the last gap repeats. With no
    points, every multiple of ``h``.
    """

    def __init__(self, points: Sequence[int] | None, h: int) -> None:
        self.points = _validate_points(points or (), "decoding")
        self._set = set(self.points)
        if self.points:
            self.last = self.points[-1]
            self.gap = self.points[-1] - self.points[-2] if len(self.points) > 1 else self.points[0]
        else:
            self.last = 0
            self.gap = h

    def __contains__(self, received: int) -> bool:
        if received in self._set:
            return True
        return received > self.last and (received - self.last) % self.gap == 0


class EncodePlan:
    """Cell counts at which a host finishes an encoding round.

    Explicit points first; afterwards rounds end at cell-type boundaries, so the
    default is one round per type (``i_a - i_(a-1) = m_a``).
    """

    def __init__(self, points: Sequence[int] | None) -> None:
        self.points = _validate_points(points or (), "encoding")

    def next_boundary(self, generated: int, config: MetConfig) -> int:
        for x in self.points:
            if x > generated:
                return x
        offs = config.offsets
        for x in offs[1:]:
            if x > generated:
                return x
        # past the configured types: boundaries of doubling extension types
        size, edge = config.m[-1], offs[-1]
        while edge <= generated:
            size *= 2
            edge += size
        return edge


def grow_cells(iblt: Iblt, extra_types: int, pairs: PairBatch | Iterable[KeyValuePair]) -> Iblt:
    """Return a copy of ``iblt`` with ``extra_types`` more cell types.

    The local set ``pairs`` is inserted into the new cells only; existing
    cells are untouched.
    """
    out = iblt.copy()
    if extra_types == 0:
        return out
    if not isinstance(pairs, PairBatch):
        pairs = PairBatch.from_pairs(pairs, iblt.hasher)
    old = len(out)
    out.extend(extra_types)
    out.insert_batch(pairs, lo=old)
    return out


def _ingest(values: Iterable[int] | np.ndarray, hasher: Hasher) -> PairBatch:
    if isinstance(values, np.ndarray):
        arr = values.astype(np.uint64).reshape(len(values), -1)
        if np.unique(arr, axis=0).shape[0] != arr.shape[0]:
            raise ValueError("set contains duplicate elements")
        return PairBatch.from_values(arr, hasher)
    vals = [z.value if isinstance(z, KeyValuePair) else int(z) for z in values]
    if len(set(vals)) != len(vals):
        raise ValueError("set contains duplicate elements")
    limit = 1 << hasher.config.kappa
    if any(not 0 <= v < limit for v in vals):
        raise ValueError(f"elements must fit in {hasher.config.kappa} bits")
    return PairBatch.from_values(vals, hasher)


class _LocalCells:
    """A host's own IBLT, generated lazily one encoding round at a time."""

    def __init__(self, values, config: MetConfig, encoding: EncodePlan, max_growth: int,
                 hasher: Hasher | None) -> None:
        self.iblt = Iblt(config, hasher)
        self.batch = _ingest(values, self.iblt.hasher)
        self.encoding = encoding
        self.total = config.extended(max_growth).num_cells if max_growth else config.num_cells
        self.generated = 0

    @property
    def config(self) -> MetConfig:
        return self.iblt.config

    def materialize(self, upto: int) -> bool:
        """Make cells ``[0, upto)`` available; True if the configuration grew."""
        grew = False
        while self.generated < upto:
            end = min(self.encoding.next_boundary(self.generated, self.config), self.total)
            while end > len(self.iblt):
                self.iblt.extend(1)
                grew = True
            self.iblt.insert_batch(self.batch, lo=self.generated, hi=end)
            self.generated = end
        return grew


class HostA:
    """Sender: streams its cells until acknowledged or exhausted."""

    def __init__(self, values, config: MetConfig, h: int = 1, encoding: Sequence[int] | None = None,
                 max_growth: int = 0, hasher: Hasher | None = None) -> None:
        if h < 1:
            raise ValueError("packet size must be >= 1")
        self.h = h
        self.local = _LocalCells(values, config, EncodePlan(encoding), max_growth, hasher)
        self.cursor = 0
        self.outcome: str | None = None
        self._hello_sent = False

    @property
    def done(self) -> bool:
        return self.outcome is not None or self.cursor >= self.local.total

    def next_message(self) -> Message | None:
        if self.outcome is not None:
            return None
        if not self._hello_sent:
            self._hello_sent = True
            return Message(Tag.HELLO, self.local.config.digest())
        if self.cursor >= self.local.total:
            return None
        end = min(self.cursor + self.h, self.local.total)
        self.local.materialize(end)
        payload = self.local.iblt.to_bytes(self.cursor, end)
        self.cursor = end
        return Message(Tag.CELLS, payload)

    def receive(self, msg: Message) -> None:
        if msg.tag is Tag.ACK:
            self.outcome = "success"
        elif msg.tag is Tag.FAIL:
            self.outcome = "failed"
        else:
            raise ProtocolError(f"host A cannot handle {msg.tag.name}")


class HostB:
    """Receiver: builds the difference prefix and decides when it is done.

    ``min_cells`` defaults to ``m_1``: with every data type touching type-1
    cells, no unseen difference pair can hide once those are in. ``accept`` is
    a simulation-only hook that can veto a decoded difference.
    """

    def __init__(self, values, config: MetConfig, h: int = 1, decoding: Sequence[int] | None = None,
                 encoding: Sequence[int] | None = None, min_cells: int | None = None,
                 max_growth: int = 0, hasher: Hasher | None = None,
                 accept: Callable[[SignedDifference], bool] | None = None) -> None:
        self.local = _LocalCells(values, config, EncodePlan(encoding), max_growth, hasher)
        self.decoding = DecodePlan(decoding, h)
        self.min_cells = config.m[0] if min_cells is None else min_cells
        self.decoder = StreamingDecoder(self.local.config, self.local.iblt.hasher)
        self.accept = accept
        self.outcome: str | None = None
        self.attempts: list[tuple[int, bool]] = []
        self._hello = False

    @property
    def received(self) -> int:
        return self.decoder.received

    def difference(self) -> SignedDifference:
        return self.decoder.difference()

    def receive(self, msg: Message) -> list[Message]:
        if msg.tag is Tag.HELLO:
            if msg.payload != self.local.config.digest():
                raise ConfigMismatchError("peer configuration digest does not match")
            self._hello = True
            return []
        if msg.tag is not Tag.CELLS:
            raise ProtocolError(f"host B cannot handle {msg.tag.name}")
        if not self._hello:
            raise ProtocolError("cells received before the configuration handshake")
        if self.outcome is not None:
            return []
        cfg = self.local.config
        counts, keys, values = decode_cells(msg.payload, cfg.nu, cfg.kappa)
        keys_i = array_to_ints(keys)
        values_i = array_to_ints(values)
        for c, k, v in zip(counts.tolist(), keys_i, values_i):
            idx = self.decoder.received
            if idx >= self.local.total:
                raise ProtocolError("more cells than the configuration allows")
            if self.local.materialize(idx + 1):
                self.decoder.extend(self.local.config, self.local.iblt.hasher)
            own = self.local.iblt
            own_key = array_to_ints(own.keys[idx:idx + 1])[0]
            own_value = array_to_ints(own.values[idx:idx + 1])[0]
            self.decoder.push(int(own.counts[idx]) - c, own_key ^ k, own_value ^ v)
            n = idx + 1
            last = n == self.local.total
            if (n in self.decoding or last) and n >= self.min_cells:
                ok = self.decoder.decode()
                if ok and self.accept is not None:
                    ok = self.accept(self.decoder.difference())
                self.attempts.append((n, ok))
                if ok:
                    self.outcome = "success"
                    return [Message(Tag.ACK)]
            if last:
                self.outcome = "failed"
                return [Message(Tag.FAIL)]
        return []


@dataclass
class Transcript:
    """Every message exchanged, for communication-cost accounting."""

    cell_size: int
    entries: list[tuple[str, Message, int]] = field(default_factory=list)
    outcome: str = "running"
    cells_sent: int = 0
    decode_attempts: list[tuple[int, bool]] = field(default_factory=list)

    def record(self, direction: str, msg: Message) -> None:
        self.entries.append((direction, msg, msg.size))
        if msg.tag is Tag.CELLS:
            self.cells_sent += len(msg.payload) // self.cell_size

    @property
    def bytes_sent(self) -> int:
        return sum(n for _, _, n in self.entries)

    @property
    def cell_bytes(self) -> int:
        """Cell payload only: the figure compared against other schemes."""
        return self.cells_sent * self.cell_size

    @property
    def messages(self) -> int:
        return len(self.entries)

    def lines(self) -> list[str]:
        out = []
        sent = 0
        attempts = dict(self.decode_attempts)
        for direction, msg, size in self.entries:
            if msg.tag is Tag.CELLS:
                k = len(msg.payload) // self.cell_size
                first, sent = sent + 1, sent + k
                span = f"c{first}" if k == 1 else f"c{first}..c{sent}"
                note = ""
                if sent in attempts:
                    note = "  -> B decodes: " + ("success" if attempts[sent] else "fails (implicit NACK)")
                out.append(f"{direction}  CELLS {span:<14} {size:>6} B{note}")
            else:
                out.append(f"{direction}  {msg.tag.name:<20} {size:>6} B")
        out.append(f"outcome: {self.outcome}; cells sent: {self.cells_sent}; "
                   f"cell bytes: {self.cell_bytes}; total bytes: {self.bytes_sent}")
        return out


def run_protocol(values_a, values_b, config: MetConfig, h: int = 1,
                 decode_schedule: Sequence[int] | None = None,
                 encode_schedule: Sequence[int] | None = None,
                 min_cells: int | None = None, max_growth: int = 0,
                 hasher: Hasher | None = None, config_b: MetConfig | None = None,
                 accept: Callable[[SignedDifference], bool] | None = None,
                 ) -> tuple[SignedDifference, Transcript]:
    """Co-simulate both hosts in one thread.

    Returns the difference as decoded by B (partial if the run failed) and the
    transcript. ``config_b`` lets tests give B a different configuration.
    """
    host_a = HostA(values_a, config, h, encode_schedule, max_growth, hasher)
    host_b = HostB(values_b, config_b or config, h, decode_schedule, encode_schedule, min_cells,
                   max_growth, hasher if config_b is None else None, accept)
    transcript = Transcript(config.cell_size)
    while host_a.outcome is None:
        msg = host_a.next_message()
        if msg is None:
            raise ProtocolError("sender exhausted without a verdict from the receiver")
        transcript.record("A->B", msg)
        for reply in host_b.receive(msg):
            transcript.record("B->A", reply)
            host_a.receive(reply)
    transcript.outcome = host_a.outcome
    transcript.decode_attempts = list(host_b.attempts)
    return host_b.difference(), transcript


def _read_frames(sock: socket.socket, reader: FrameReader, want: int) -> list[Message]:
    out: list[Message] = []
    while len(out) < want:
        chunk = sock.recv(65536)
        if not chunk:
            raise ProtocolError("connection closed mid-message")
        out.extend(reader.feed(chunk))
    return out


def run_protocol_threaded(values_a, values_b, config: MetConfig, h: int = 1,
                          decode_schedule: Sequence[int] | None = None,
                          encode_schedule: Sequence[int] | None = None,
                          min_cells: int | None = None, max_growth: int = 0,
                          ) -> tuple[SignedDifference, Transcript]:
    """Run the hosts on two threads joined by a local stream socket.

    The implicit-NACK timeout is modeled by a round barrier: after each packet
    A waits until B has finished with it, then checks for a reply. No bytes
    cross the link for it, so transcripts match :func:`run_protocol`.
    """
    host_a = HostA(values_a, config, h, encode_schedule, max_growth)
    host_b = HostB(values_b, config, h, decode_schedule, encode_schedule, min_cells, max_growth)
    sock_a, sock_b = socket.socketpair()
    round_done = threading.Barrier(2)
    replies_pending: list[int] = [0]
    errors: list[BaseException] = []

    def serve_b() -> None:
        reader = FrameReader()
        try:
            while True:
                (msg,) = _read_frames(sock_b, reader, 1)
                replies = host_b.receive(msg)
                for reply in replies:
                    sock_b.sendall(reply.encode())
                replies_pending[0] = len(replies)
                round_done.wait()
                if host_b.outcome is not None:
                    return
        except BaseException as exc:  # surfaced on the calling thread
            errors.append(exc)
            round_done.abort()

    worker = threading.Thread(target=serve_b, daemon=True)
    worker.start()
    transcript = Transcript(config.cell_size)
    reader = FrameReader()
    try:
        while host_a.outcome is None:
            msg = host_a.next_message()
            if msg is None:
                raise ProtocolError("sender exhausted without a verdict from the receiver")
            transcript.record("A->B", msg)
            sock_a.sendall(msg.encode())
            try:
                round_done.wait()
            except threading.BrokenBarrierError:
                break
            for reply in _read_frames(sock_a, reader, replies_pending[0]):
                transcript.record("B->A", reply)
                host_a.receive(reply)
    finally:
        worker.join(timeout=10)
        sock_a.close()
        sock_b.close()
    if errors:
        raise errors[0]
    transcript.outcome = host_a.outcome or "failed"
    transcript.decode_attempts = list(host_b.attempts)
    return host_b.difference(), transcript


__all__ = [
    "ConfigMismatchError",
    "DecodePlan",
    "EncodePlan",
    "FrameReader",
    "HostA",
    "HostB",
    "Message",
    "ProtocolError",
    "Tag",
    "Transcript",
    "grow_cells",
    "run_protocol",
    "run_protocol_threaded",
    "schedule",
]
