"""In-process, topic-based publish/subscribe bus with tick-synchronous delivery.

Everything published during tick t becomes visible to subscribers at the
start of tick t+1, in the global total order (t, topic name, seq). The bus
itself is single-threaded (owned by the engine loop); external consumers
attach through taps: a lossless ordered queue for the recorder and a
latest-wins store for the UI.
"""
from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .core import SimTime
from .errors import TopicError
from .wire import TAG_OF_TYPE

_SEGMENT_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")


def _split_topic(name: str, allow_wildcard: bool = False) -> list[str]:
    if not name.startswith("/") or name.endswith("/"):
        raise TopicError(f"malformed topic {name!r}")
    segments = name[1:].split("/")
    for seg in segments:
        if allow_wildcard and seg == "+":
            continue
        if not seg or any(c not in _SEGMENT_CHARS for c in seg):
            raise TopicError(f"malformed topic segment {seg!r} in {name!r}")
    return segments


@dataclass(frozen=True, slots=True)
class Envelope:
    topic: str
    t_pub: SimTime
    seq: int
    payload: object


class Subscription:
    """Receives envelopes matching an exact name or single-segment + wildcard."""

    def __init__(self, pattern: str, created_index: int):
        self.pattern = pattern
        self._segments = _split_topic(pattern, allow_wildcard=True)
        self._created_index = created_index
        self._inbox: deque[Envelope] = deque()

    def matches(self, topic: str) -> bool:
        segments = topic[1:].split("/")
        if len(segments) != len(self._segments):
            return False
        return all(p == "+" or p == s for p, s in zip(self._segments, segments))

    def poll(self) -> list[Envelope]:
        """Drain everything delivered so far, in delivery order."""
        out = list(self._inbox)
        self._inbox.clear()
        return out


class Publisher:
    def __init__(self, bus: "MessageBus", topic: str):
        self._bus = bus
        self.topic = topic

    def publish(self, payload) -> Envelope:
        return self._bus._publish(self.topic, payload)


class MessageBus:
    def __init__(self):
        self._tags: dict[str, int] = {}
        self._seqs: dict[str, int] = {}
        self._subs: list[Subscription] = []
        self._taps: list[Callable[[Sequence[Envelope]], None]] = []
        self._pending: list[tuple[int, Envelope]] = []
        self._publish_counter = 0
        self.now = SimTime(0, 0.001)

    @property
    def topic_tags(self) -> dict[str, int]:
        return dict(self._tags)

    def set_time(self, t: SimTime):
        self.now = t

    def advertise(self, topic: str, payload_type: type) -> Publisher:
        _split_topic(topic)
        tag = TAG_OF_TYPE.get(payload_type)
        if tag is None:
            raise TopicError(f"{payload_type.__name__} is not a bus message type")
        existing = self._tags.get(topic)
        if existing is not None and existing != tag:
            raise TopicError(
                f"topic {topic} already carries tag {existing}, cannot advertise tag {tag}")
        if existing is None:
            self._tags[topic] = tag
            self._seqs[topic] = 0
        return Publisher(self, topic)

    def subscribe(self, pattern: str) -> Subscription:
        sub = Subscription(pattern, self._publish_counter)
        self._subs.append(sub)
        return sub

    def add_tap(self, tap: Callable[[Sequence[Envelope]], None]):
        self._taps.append(tap)

    def _publish(self, topic: str, payload) -> Envelope:
        tag = self._tags.get(topic)
        if tag is None:
            raise TopicError(f"publish on unadvertised topic {topic}")
        if TAG_OF_TYPE.get(type(payload)) != tag:
            raise TopicError(
                f"payload {type(payload).__name__} does not match topic {topic} tag {tag}")
        env = Envelope(topic=topic, t_pub=self.now, seq=self._seqs[topic], payload=payload)
        self._seqs[topic] += 1
        self._pending.append((self._publish_counter, env))
        self._publish_counter += 1
        return env

    def flush_tick(self) -> list[Envelope]:
        """Finalize the current tick: order everything published during it,
        hand it to subscriptions (visible on their next poll) and taps."""
        if not self._pending:
            return []
        self._pending.sort(key=lambda item: (item[1].topic, item[1].seq))
        ordered = [env for _, env in self._pending]
        for sub in self._subs:
            created = sub._created_index
            for index, env in self._pending:
                if index >= created and sub.matches(env.topic):
                    sub._inbox.append(env)
        for tap in self._taps:
            tap(ordered)
        self._pending.clear()
        return ordered


class LosslessQueue:
    """Thread-safe ordered hand-off for the recorder: never drops, never
    blocks the producer."""

    def __init__(self):
        self._lock = threading.Lock()
        self._items: deque[Envelope] = deque()
        self._event = threading.Event()
        self.closed = False

    def __call__(self, envelopes: Sequence[Envelope]):
        with self._lock:
            self._items.extend(envelopes)
        self._event.set()

    def drain(self, timeout: float | None = 0.05) -> list[Envelope]:
        if timeout:
            self._event.wait(timeout)
        with self._lock:
            out = list(self._items)
            self._items.clear()
            self._event.clear()
        return out

    def close(self):
        self.closed = True
        self._event.set()


@dataclass
class LatestWins:
    """Lossy per-topic store for the UI bridge: newest envelope wins."""

    _lock: threading.Lock = field(default_factory=threading.Lock)
    _latest: dict[str, Envelope] = field(default_factory=dict)

    def __call__(self, envelopes: Sequence[Envelope]):
        with self._lock:
            for env in envelopes:
                self._latest[env.topic] = env

    def snapshot(self) -> dict[str, Envelope]:
        with self._lock:
            return dict(self._latest)
