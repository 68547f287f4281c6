"""Replication layers: convergent sets exchanging add/remove messages.

``ORSet`` is an observed-remove, add-wins set. A remove lists the tags it
has observed; tags it names that have not been added yet are remembered, so
the set converges without causal delivery. ``CounterSet`` keeps a signed
count per element and shows elements whose count is positive.

Both notify observers with ``(kind, element)`` only when an element's
visibility changes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Any, Hashable, NamedTuple

from . import codec
from .core import ADD, DEL, InvalidOperation, Layer, ReplicaId

REMOVE = "remove"


@codec.record("tag")
class Tag(NamedTuple):
    origin: ReplicaId
    counter: int

    def _codec_fields(self):
        return tuple(self)


@dataclass(frozen=True)
class SetOperation:
    kind: str  # "add" | "del"
    element: Hashable


@codec.record("setmsg")
class SetMessage(NamedTuple):
    """Wire message. Messages built locally are well formed by construction;
    decoded ones go through ``validate``."""

    kind: str  # "add" | "remove"
    element: Any
    tags: frozenset | None = None
    delta: int | None = None

    def validate(self) -> SetMessage:
        if self.kind not in (ADD, REMOVE):
            raise ValueError(f"bad message kind {self.kind!r}")
        if (self.tags is None) == (self.delta is None):
            raise ValueError("a set message carries either tags or a delta")
        if self.tags is not None and not all(isinstance(t, Tag) for t in self.tags):
            raise ValueError("tags must be Tag records")
        if self.kind == ADD and self.tags is not None and len(self.tags) != 1:
            raise ValueError("an add carries exactly one tag")
        return self

    @staticmethod
    def _codec_build(*fields) -> SetMessage:
        return SetMessage(*fields).validate()

    def _codec_fields(self):
        return tuple(self)

    def to_bytes(self) -> bytes:
        body = codec.dumps(self)
        return struct.pack(">I", len(body)) + body

    @classmethod
    def from_bytes(cls, data: bytes) -> SetMessage:
        if len(data) < 4:
            raise codec.CodecError("missing length prefix")
        (n,) = struct.unpack(">I", data[:4])
        if len(data) != 4 + n:
            raise codec.CodecError(f"length prefix says {n} bytes, got {len(data) - 4}")
        msg = codec.loads(data[4:])
        if not isinstance(msg, cls):
            raise codec.CodecError("payload is not a set message")
        return msg

    def to_json(self) -> dict:
        out = {"kind": self.kind, "element": codec.to_json(self.element)}
        if self.tags is not None:
            out["tags"] = [{"origin": t.origin, "counter": t.counter} for t in sorted(self.tags)]
        else:
            out["delta"] = self.delta
        return out

    @classmethod
    def from_json(cls, obj: dict) -> SetMessage:
        element = codec.from_json(obj["element"])
        if "tags" in obj:
            tags = frozenset(Tag(t["origin"], t["counter"]) for t in obj["tags"])
            return cls(obj["kind"], element, tags=tags).validate()
        return cls(obj["kind"], element, delta=obj["delta"]).validate()


class ReplicatedSet(Layer):
    """Shared plumbing: local operations queue their message in an outbox."""

    def __init__(self, replica_id: ReplicaId):
        super().__init__()
        self.replica_id = replica_id
        self._outbox: list[SetMessage] = []

    def add(self, element: Hashable) -> SetMessage:
        msg = self._local_add(element)
        self._outbox.append(msg)
        self._integrate(msg)
        return msg

    def remove(self, element: Hashable) -> SetMessage:
        msg = self._local_remove(element)
        self._outbox.append(msg)
        self._integrate(msg)
        return msg

    # Names used by the layer contract.
    local_add = add
    local_remove = remove

    def modify(self, op: SetOperation) -> None:
        if not isinstance(op, SetOperation):
            raise InvalidOperation(f"expected SetOperation, got {type(op).__name__}")
        if op.kind == ADD:
            self.add(op.element)
        elif op.kind == DEL:
            self.remove(op.element)
        else:
            raise InvalidOperation(f"unknown set operation {op.kind!r}")

    def apply_remote(self, msg: SetMessage) -> None:
        self._integrate(msg)

    def drain(self) -> list[SetMessage]:
        out, self._outbox = self._outbox, []
        return out

    def __contains__(self, element: Hashable) -> bool:
        raise NotImplementedError

    def _local_add(self, element):
        raise NotImplementedError

    def _local_remove(self, element):
        raise NotImplementedError

    def _integrate(self, msg: SetMessage) -> None:
        raise NotImplementedError


class ORSet(ReplicatedSet):
    def __init__(self, replica_id: ReplicaId):
        super().__init__(replica_id)
        self._live: dict[Hashable, set[Tag]] = {}
        # Every tag named by a remove, including ones whose add is still in flight.
        self._removed: set[Tag] = set()
        self._counter = 0
        # size bookkeeping for state_size(); _dirty may hold repeats
        self._dirty: list = []
        self._live_sizes: dict[Hashable, int] = {}
        self._live_body = 0
        self._removed_body = 0
        self._removed_new: list[Tag] = []

    def _local_add(self, element):
        self._counter += 1
        return SetMessage(ADD, element, tags=frozenset((Tag(self.replica_id, self._counter),)))

    def _local_remove(self, element):
        return SetMessage(REMOVE, element, tags=frozenset(self._live.get(element, ())))

    def remove(self, element: Hashable) -> SetMessage:
        # Same effect as integrating our own remove message: every observed tag
        # is live (hence not yet a tombstone) and the element disappears.
        tags = self._live.pop(element, None)
        msg = SetMessage(REMOVE, element, frozenset(tags or ()))
        self._outbox.append(msg)
        if tags:
            self._removed.update(tags)
            self._removed_new.extend(tags)
            self._mark(element)
            self._notify(DEL, element)
        return msg

    local_remove = remove

    def _integrate(self, msg: SetMessage) -> None:
        element = msg.element
        if msg.kind == ADD:
            (tag,) = msg.tags
            if tag in self._removed:
                return
            self._mark(element)
            tags = self._live.get(element)
            if tags is None:
                self._live[element] = {tag}
                self._notify(ADD, element)
            else:
                tags.add(tag)
        else:
            fresh = msg.tags - self._removed
            self._removed.update(fresh)
            self._removed_new.extend(fresh)
            tags = self._live.get(element)
            if tags is None:
                return
            self._mark(element)
            tags.difference_update(msg.tags)
            if not tags:
                del self._live[element]
                self._notify(DEL, element)

    def _mark(self, element) -> None:
        self._dirty.append(element)
        if len(self._dirty) > 1 << 16:
            self.state_size()  # fold pending changes so the list stays bounded

    def tags_of(self, element: Hashable) -> frozenset:
        return frozenset(self._live.get(element, ()))

    def __contains__(self, element):
        return element in self._live

    def lookup(self) -> frozenset:
        return frozenset(self._live)

    def __len__(self) -> int:
        return len(self._live)

    def state(self):
        return ({e: frozenset(t) for e, t in self._live.items()}, frozenset(self._removed))

    def state_size(self) -> int:
        sizes = self._live_sizes
        for e in self._dirty:
            self._live_body -= sizes.pop(e, 0)
            tags = self._live.get(e)
            if tags is not None:
                sizes[e] = codec.size(e) + codec.size(frozenset(tags))
                self._live_body += sizes[e]
        self._dirty.clear()
        self._removed_body += sum(codec.size(t) for t in self._removed_new)
        self._removed_new.clear()
        box = codec.container_size
        return box(2, box(len(self._live), self._live_body) + box(len(self._removed), self._removed_body))


class CounterSet(ReplicatedSet):
    """Per-element signed counter; an element is present while its count is > 0.

    Concurrent add and remove of one element cancel out, so the element may
    end up absent even though the add was not observed by the remover.
    """

    def __init__(self, replica_id: ReplicaId):
        super().__init__(replica_id)
        self._counts: dict[Hashable, int] = {}
        self._dirty: list = []
        self._sizes: dict[Hashable, int] = {}
        self._body = 0

    def _local_add(self, element):
        return SetMessage(ADD, element, delta=1)

    def _local_remove(self, element):
        return SetMessage(REMOVE, element, delta=-1)

    def _integrate(self, msg: SetMessage) -> None:
        element = msg.element
        before = self._counts.get(element, 0)
        after = before + msg.delta
        self._dirty.append(element)
        if len(self._dirty) > 1 << 16:
            self.state_size()
        if after:
            self._counts[element] = after
        else:
            self._counts.pop(element, None)
        if before <= 0 < after:
            self._notify(ADD, element)
        elif after <= 0 < before:
            self._notify(DEL, element)

    def count(self, element: Hashable) -> int:
        return self._counts.get(element, 0)

    def __contains__(self, element):
        return self._counts.get(element, 0) > 0

    def lookup(self) -> frozenset:
        return frozenset(e for e, c in self._counts.items() if c > 0)

    def __len__(self) -> int:
        return sum(1 for c in self._counts.values() if c > 0)

    def state(self):
        return dict(self._counts)

    def state_size(self) -> int:
        for e in self._dirty:
            self._body -= self._sizes.pop(e, 0)
            n = self._counts.get(e)
            if n is not None:
                self._sizes[e] = codec.size(e) + codec.size(n)
                self._body += self._sizes[e]
        self._dirty.clear()
        return codec.container_size(len(self._counts), self._body)


SET_TYPES = {"orset": ORSet, "counterset": CounterSet}


def make_set(kind: str, replica_id: ReplicaId) -> ReplicatedSet:
    try:
        return SET_TYPES[kind](replica_id)
    except KeyError:
        raise ValueError(f"unknown set {kind!r}; valid: {', '.join(SET_TYPES)}") from None
