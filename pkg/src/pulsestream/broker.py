"""Embedded topic/partition message bus with producer and consumer-group semantics.

In-process stand-in for an external log broker: topics are split into
partitions, offsets are contiguous per partition, consumer groups share
committed offsets, and delivery is at-least-once (replay from the last
commit after a handle is dropped).
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass

from .errors import AlreadyExists, InvalidArgument, InvalidHandle, NotFound

DEFAULT_PARTITIONS = 4


@dataclass(frozen=True)
class TopicMessage:
    topic: str
    partition: int
    offset: int
    key: bytes | None
    payload: bytes
    enqueued_at: float


def _key_partition(key: bytes, n: int) -> int:
    # Stable across processes; Python's hash() is salted.
    digest = hashlib.md5(key).digest()
    return int.from_bytes(digest[:8], "big") % n


class MessageBus:
    def __init__(self):
        self._cond = threading.Condition()
        self._partitions: dict[str, list[list[TopicMessage]]] = {}
        self._round_robin: dict[str, int] = {}
        # (topic, group) -> {partition: committed offset (next to read)}
        self._committed: dict[tuple[str, str], dict[int, int]] = {}
        self._members: dict[tuple[str, str], list["ConsumerHandle"]] = {}

    def create_topic(self, name: str, partitions: int) -> None:
        if not name:
            raise InvalidArgument("topic name must be non-empty")
        if partitions < 1:
            raise InvalidArgument(f"partitions must be >= 1, got {partitions}")
        with self._cond:
            if name in self._partitions:
                raise AlreadyExists(f"topic already exists: {name}")
            self._partitions[name] = [[] for _ in range(partitions)]
            self._round_robin[name] = 0

    def publish(self, topic: str, key: bytes | None, payload: bytes) -> tuple[int, int]:
        with self._cond:
            parts = self._partitions.get(topic)
            if parts is None:
                raise NotFound(f"unknown topic: {topic}")
            if key is None:
                p = self._round_robin[topic] % len(parts)
                self._round_robin[topic] += 1
            else:
                p = _key_partition(key, len(parts))
            offset = len(parts[p])
            parts[p].append(TopicMessage(topic, p, offset, key, payload, time.time()))
            self._cond.notify_all()
            return p, offset

    def subscribe(self, topic: str, group_id: str) -> "ConsumerHandle":
        with self._cond:
            if topic not in self._partitions:
                raise NotFound(f"unknown topic: {topic}")
            gkey = (topic, group_id)
            handle = ConsumerHandle(self, topic, group_id)
            self._members.setdefault(gkey, []).append(handle)
            self._committed.setdefault(gkey, {})
            self._rebalance(gkey)
            return handle

    def head_offsets(self, topic: str) -> dict[int, int]:
        with self._cond:
            parts = self._partitions.get(topic)
            if parts is None:
                raise NotFound(f"unknown topic: {topic}")
            return {p: len(msgs) for p, msgs in enumerate(parts)}

    # -- internals (called with or without the lock as noted) --

    def _rebalance(self, gkey) -> None:
        # Caller holds the lock. Assignment only changes at subscribe/close.
        members = self._members[gkey]
        n_parts = len(self._partitions[gkey[0]])
        committed = self._committed[gkey]
        for m in members:
            m._assigned = []
        for p in range(n_parts):
            m = members[p % len(members)] if members else None
            if m is not None:
                m._assigned.append(p)
        for m in members:
            # Positions restart from the last commit: at-least-once on rebalance.
            m._positions = {p: committed.get(p, 0) for p in m._assigned}

    def _drop(self, handle: "ConsumerHandle") -> None:
        with self._cond:
            gkey = (handle.topic, handle.group_id)
            members = self._members.get(gkey, [])
            if handle in members:
                members.remove(handle)
                if members:
                    self._rebalance(gkey)

    def _poll(self, handle: "ConsumerHandle", max_messages: int, timeout: float) -> list[TopicMessage]:
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                batch = self._take(handle, max_messages)
                if batch:
                    return batch
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return []
                self._cond.wait(remaining)

    def _take(self, handle: "ConsumerHandle", max_messages: int) -> list[TopicMessage]:
        parts = self._partitions[handle.topic]
        batch: list[TopicMessage] = []
        for p in handle._assigned:
            pos = handle._positions[p]
            head = len(parts[p])
            while pos < head and len(batch) < max_messages:
                batch.append(parts[p][pos])
                pos += 1
            handle._positions[p] = pos
            if len(batch) >= max_messages:
                break
        return batch

    def _commit(self, handle: "ConsumerHandle", offsets: dict[int, int]) -> None:
        with self._cond:
            parts = self._partitions[handle.topic]
            for p, off in offsets.items():
                if p not in handle._positions:
                    raise InvalidArgument(f"partition {p} not assigned to this handle")
                if off > len(parts[p]):
                    raise InvalidArgument(f"offset {off} beyond head {len(parts[p])} of partition {p}")
                if off > handle._positions[p]:
                    raise InvalidArgument(f"offset {off} beyond polled position {handle._positions[p]}")
            committed = self._committed[(handle.topic, handle.group_id)]
            for p, off in offsets.items():
                committed[p] = off

    def committed_offsets(self, topic: str, group_id: str) -> dict[int, int]:
        with self._cond:
            return dict(self._committed.get((topic, group_id), {}))


class ConsumerHandle:
    def __init__(self, bus: MessageBus, topic: str, group_id: str):
        self.bus = bus
        self.topic = topic
        self.group_id = group_id
        self._assigned: list[int] = []
        self._positions: dict[int, int] = {}
        self._closed = False

    @property
    def assignment(self) -> list[int]:
        return list(self._assigned)

    def poll(self, max_messages: int = 100, timeout: float = 0.0) -> list[TopicMessage]:
        if self._closed:
            raise InvalidHandle("handle is closed")
        if max_messages < 1:
            raise InvalidArgument("max_messages must be >= 1")
        return self.bus._poll(self, max_messages, timeout)

    def commit(self, offsets: dict[int, int]) -> None:
        if self._closed:
            raise InvalidHandle("handle is closed")
        self.bus._commit(self, offsets)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self.bus._drop(self)
