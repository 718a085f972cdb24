"""Bit-exact record and replay of bus traffic (.catbag container).

Layout (little-endian throughout, docs/bag-format.md):
  header   "CATB" | u16 version | u64 seed | f64 step
  topics   u32 count | per topic: u32 id, u16 name length, name utf-8, u8 tag
  records  per record: u32 topic id | u64 t ticks | u32 seq | u32 length | payload
  footer   "CEND" | u64 record count

Floats inside payloads are raw 8-byte IEEE-754 patterns, so identical runs
produce identical bytes and diffing two files is meaningful at the byte level.
"""
from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .bus import Envelope
from .errors import BagError
from . import wire

MAGIC = b"CATB"
FOOTER = b"CEND"
VERSION = 1
_HEADER = struct.Struct("<HQd")
_RECORD = struct.Struct("<IQII")


@dataclass(frozen=True, slots=True)
class BagRecord:
    topic_id: int
    t: int  # ticks
    seq: int
    payload: bytes  # canonical wire encoding
    offset: int = 0  # byte offset of this record in the file


@dataclass
class BagFile:
    version: int
    seed: int
    step: float
    topics: tuple[tuple[int, str, int], ...]  # (id, name, tag)
    records: list[BagRecord]
    truncated: bool = False
    last_valid_offset: int = 0
    _names: dict[int, str] = field(default_factory=dict, repr=False)
    _tags: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._names = {tid: name for tid, name, _ in self.topics}
        self._tags = {tid: tag for tid, _, tag in self.topics}

    def topic_name(self, topic_id: int) -> str:
        return self._names[topic_id]

    def topic_tag(self, topic_id: int) -> int:
        return self._tags[topic_id]

    def decode(self, record: BagRecord):
        return wire.decode_payload(self.topic_tag(record.topic_id), record.payload)

    @property
    def duration_ticks(self) -> int:
        return self.records[-1].t + 1 if self.records else 0


class BagWriter:
    """Collects records in arrival order and writes the file on close.

    Envelope order must already be the bus's global order; close() applies a
    stable sort on (t, topic name, seq) to keep the file invariant even for
    hand-fed records.
    """

    def __init__(self, path: str, seed: int, step: float):
        self.path = path
        self.seed = seed
        self.step = step
        self._topic_ids: dict[str, int] = {}
        self._topics: list[tuple[int, str, int]] = []
        self._records: list[tuple[int, str, int, bytes]] = []  # (t, topic, seq, payload)
        self.closed = False

    def add_topic(self, name: str, tag: int) -> int:
        if name in self._topic_ids:
            return self._topic_ids[name]
        tid = len(self._topics)
        self._topic_ids[name] = tid
        self._topics.append((tid, name, tag))
        return tid

    def write_envelope(self, env: Envelope, tag: int):
        self.add_topic(env.topic, tag)
        payload = wire.encode_payload(tag, env.payload)
        self._records.append((env.t_pub.ticks, env.topic, env.seq, payload))

    def write_raw(self, t_ticks: int, topic: str, tag: int, seq: int, payload: bytes):
        self.add_topic(topic, tag)
        self._records.append((t_ticks, topic, seq, payload))

    def close(self):
        if self.closed:
            return
        self.closed = True
        self._records.sort(key=lambda r: (r[0], r[1], r[2]))
        try:
            with open(self.path, "wb") as f:
                f.write(MAGIC)
                f.write(_HEADER.pack(VERSION, self.seed, self.step))
                f.write(struct.pack("<I", len(self._topics)))
                for tid, name, tag in self._topics:
                    raw = name.encode("utf-8")
                    f.write(struct.pack("<IH", tid, len(raw)) + raw + struct.pack("<B", tag))
                for t, topic, seq, payload in self._records:
                    tid = self._topic_ids[topic]
                    f.write(_RECORD.pack(tid, t, seq, len(payload)))
                    f.write(payload)
                f.write(FOOTER)
                f.write(struct.pack("<Q", len(self._records)))
        except OSError as exc:
            # best effort partial-file marker so readers see the abort
            try:
                with open(self.path, "ab") as f:
                    f.write(b"CBAD")
            except OSError:
                pass
            raise BagError(f"bag write failed: {exc}") from exc


def read_bag(path: str, strict: bool = True) -> BagFile:
    """Parse a bag. strict=True raises BagError on truncation/corruption with
    the last valid offset; strict=False salvages the valid prefix instead."""
    with open(path, "rb") as f:
        data = f.read()

    def fail(message: str, offset: int):
        raise BagError(message, offset=offset)

    if data[:4] != MAGIC:
        fail("not a catbag file (bad magic)", 0)
    off = 4
    try:
        version, seed, step = _HEADER.unpack_from(data, off)
    except struct.error:
        fail("header truncated", off)
    if version != VERSION:
        fail(f"unsupported bag version {version}", off)
    off += _HEADER.size
    try:
        (n_topics,) = struct.unpack_from("<I", data, off)
        off += 4
        topics = []
        for _ in range(n_topics):
            tid, name_len = struct.unpack_from("<IH", data, off)
            off += 6
            name = data[off:off + name_len].decode("utf-8")
            off += name_len
            (tag,) = struct.unpack_from("<B", data, off)
            off += 1
            topics.append((tid, name, tag))
    except (struct.error, UnicodeDecodeError):
        fail("topic table truncated or corrupt", off)
    if [tid for tid, _, _ in topics] != list(range(n_topics)):
        fail("topic ids are not dense from 0", off)

    records: list[BagRecord] = []
    truncated = False
    footer_count = None
    while True:
        if data[off:off + 4] == FOOTER and len(data) - off == 12:
            (footer_count,) = struct.unpack_from("<Q", data, off + 4)
            break
        if len(data) - off < _RECORD.size:
            truncated = True
            break
        tid, t, seq, length = _RECORD.unpack_from(data, off)
        if tid >= n_topics or len(data) - off - _RECORD.size < length:
            truncated = True
            break
        payload = data[off + _RECORD.size: off + _RECORD.size + length]
        records.append(BagRecord(topic_id=tid, t=t, seq=seq, payload=payload, offset=off))
        off += _RECORD.size + length

    if footer_count is not None and footer_count != len(records):
        truncated = True
    if truncated and strict:
        fail(f"bag truncated after {len(records)} records", off)
    return BagFile(version=version, seed=seed, step=step, topics=tuple(topics),
                   records=records, truncated=truncated, last_valid_offset=off)


def play(
    bag: BagFile,
    emit: Callable[[BagRecord, str, int], None],
    rate_factor: float = 0.0,
) -> int:
    """Feed records to ``emit(record, topic_name, tag)`` in file order.

    rate_factor r > 0 paces wall-clock gaps to (sim gap)/r; r = 0 runs flat
    out. Simulated timestamps inside the records are untouched either way.
    """
    if rate_factor < 0.0:
        raise BagError(f"rate_factor must be >= 0, got {rate_factor}")
    if bag.truncated:
        raise BagError("refusing to play a truncated bag", offset=bag.last_valid_offset)
    start_wall = time.perf_counter()
    start_ticks = bag.records[0].t if bag.records else 0
    for record in bag.records:
        if rate_factor > 0.0:
            target = (record.t - start_ticks) * bag.step / rate_factor
            _sleep_until(start_wall + target)
        emit(record, bag.topic_name(record.topic_id), bag.topic_tag(record.topic_id))
    return len(bag.records)


def _sleep_until(deadline: float):
    while True:
        remaining = deadline - time.perf_counter()
        if remaining <= 0.0:
            return
        if remaining > 0.002:
            time.sleep(remaining - 0.002)


@dataclass(frozen=True, slots=True)
class DiffReport:
    index: int  # record index of first divergence
    reason: str
    topic_a: str | None = None
    topic_b: str | None = None
    offset_a: int | None = None
    offset_b: int | None = None

    def __str__(self):
        parts = [f"first divergence at record {self.index}: {self.reason}"]
        if self.topic_a or self.topic_b:
            parts.append(f"topics {self.topic_a!r} vs {self.topic_b!r}")
        if self.offset_a is not None:
            parts.append(f"byte offsets {self.offset_a} vs {self.offset_b}")
        return "; ".join(parts)


def diff(bag_a: BagFile, bag_b: BagFile) -> DiffReport | None:
    """First divergence between two record sequences compared as
    (topic name, t, payload); None when equal."""
    for i, (ra, rb) in enumerate(zip(bag_a.records, bag_b.records)):
        name_a = bag_a.topic_name(ra.topic_id)
        name_b = bag_b.topic_name(rb.topic_id)
        if name_a != name_b:
            return DiffReport(i, "topic mismatch", name_a, name_b, ra.offset, rb.offset)
        if ra.t != rb.t:
            return DiffReport(i, f"timestamp mismatch ({ra.t} vs {rb.t})",
                              name_a, name_b, ra.offset, rb.offset)
        if ra.payload != rb.payload:
            byte = next(k for k, (x, y) in enumerate(zip(ra.payload, rb.payload))
                        if x != y) if min(len(ra.payload), len(rb.payload)) else 0
            return DiffReport(i, f"payload mismatch at payload byte {byte}",
                              name_a, name_b, ra.offset, rb.offset)
    if len(bag_a.records) != len(bag_b.records):
        short, long_ = (bag_a, bag_b) if len(bag_a.records) < len(bag_b.records) else (bag_b, bag_a)
        i = len(short.records)
        missing = len(long_.records) - i
        return DiffReport(i, f"missing suffix: {missing} record(s) absent from the shorter bag",
                          topic_a=None, topic_b=long_.topic_name(long_.records[i].topic_id))
    return None


def record_envelopes(path: str, seed: int, step: float,
                     envelopes: Iterable[tuple[Envelope, int]]):
    """Convenience: write (envelope, tag) pairs straight to a bag file."""
    writer = BagWriter(path, seed, step)
    for env, tag in envelopes:
        writer.write_envelope(env, tag)
    writer.close()


class Recorder:
    """Lossless bag recorder fed from a bus tap.

    Filters by subscription patterns (None records everything), encodes on
    whatever thread calls consume(), and finalizes the file on close().
    """

    def __init__(self, path: str, seed: int, step: float,
                 tag_lookup: Callable[[str], int],
                 patterns: Sequence[str] | None = None):
        self.writer = BagWriter(path, seed, step)
        self._tag_lookup = tag_lookup
        self._patterns = None
        if patterns is not None:
            from .bus import Subscription
            self._patterns = [Subscription(p, 0) for p in patterns]

    def _matches(self, topic: str) -> bool:
        if self._patterns is None:
            return True
        return any(p.matches(topic) for p in self._patterns)

    def consume(self, envelopes: Sequence[Envelope]):
        for env in envelopes:
            if self._matches(env.topic):
                self.writer.write_envelope(env, self._tag_lookup(env.topic))

    def close(self):
        self.writer.close()
