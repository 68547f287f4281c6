"""Layer contracts, replica identity and the delivery discipline.

A replica owns one stack of layers. The bottom of the stack is made of
replication layers (convergent sets), each bound to a named channel; every
layer above is an adaptation layer that only reads the layer(s) directly
below it. ``Replica.modify`` pushes an operation down the stack and collects
the set messages produced at the bottom as envelopes; ``Replica.deliver``
feeds remote envelopes back in, exactly once and in per-origin FIFO order.
"""

from __future__ import annotations

import hashlib
import logging
from typing import Any, Callable, Iterable, Iterator, NamedTuple

from . import codec

log = logging.getLogger(__name__)

ReplicaId = int
Observer = Callable[[str, Any], None]

ADD = "add"
DEL = "del"


class InvalidOperation(ValueError):
    """Raised by ``modify`` before any state change when an operation is malformed."""


class VersionVector:
    """Map replica -> operation counter; missing entries read as 0."""

    __slots__ = ("_entries",)

    def __init__(self, entries: dict[ReplicaId, int] | None = None):
        self._entries = {r: c for r, c in (entries or {}).items() if c}

    def __getitem__(self, replica: ReplicaId) -> int:
        return self._entries.get(replica, 0)

    def increment(self, replica: ReplicaId) -> int:
        n = self._entries.get(replica, 0) + 1
        self._entries[replica] = n
        return n

    def advance(self, replica: ReplicaId, counter: int) -> None:
        if counter < self[replica]:
            raise ValueError("version vector counters never decrease")
        if counter:
            self._entries[replica] = counter

    def merge(self, other: VersionVector) -> VersionVector:
        keys = self._entries.keys() | other._entries.keys()
        return VersionVector({k: max(self[k], other[k]) for k in keys})

    def dominates(self, other: VersionVector) -> bool:
        return all(self[k] >= c for k, c in other._entries.items())

    def as_dict(self) -> dict[ReplicaId, int]:
        return dict(self._entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, VersionVector) and self._entries == other._entries

    def __repr__(self) -> str:
        return f"VersionVector({dict(sorted(self._entries.items()))})"


@codec.record("envelope")
class Envelope(NamedTuple):
    origin: ReplicaId
    seq: int
    payload: Any
    channel: str = "main"

    def _codec_fields(self):
        return tuple(self)


class Layer:
    """Common surface of every layer: ``lookup``, ``modify`` and observers.

    Incremental layers subscribe to the layer below and receive
    ``update(kind, item)`` callbacks synchronously, bottom-up.
    """

    def __init__(self) -> None:
        self._observers: list[Observer] = []

    def subscribe(self, observer: Observer) -> None:
        self._observers.append(observer)

    def _notify(self, kind: str, item: Any) -> None:
        for observer in self._observers:
            observer(kind, item)

    def lookup(self) -> Any:
        raise NotImplementedError

    def modify(self, op: Any) -> None:
        raise NotImplementedError

    def inner_layers(self) -> tuple[Layer, ...]:
        return ()

    def state(self) -> Any:
        """Encodable snapshot of this layer's own state (not its inner layers)."""
        return None

    def state_size(self) -> int:
        """``len(codec.dumps(self.state()))``; large layers override it with cached sizes."""
        return len(codec.dumps(self.state()))

    def snapshot(self) -> Any:
        """Canonical JSON-compatible form of ``lookup()`` for comparisons."""
        return codec.to_json(self.lookup())


def walk_layers(top: Layer) -> list[Layer]:
    """Every layer reachable from ``top``, bottom-up, each listed once."""
    seen: dict[int, Layer] = {}

    def visit(layer: Layer) -> None:
        for inner in layer.inner_layers():
            visit(inner)
        seen.setdefault(id(layer), layer)

    visit(top)
    return list(seen.values())


def layers_below(layer: Layer) -> list[Layer]:
    return [l for l in walk_layers(layer) if l is not layer]


def state_digest(layers: Iterable[Layer]) -> str:
    h = hashlib.sha256()
    for layer in layers:
        h.update(codec.dumps(layer.state()))
    return h.hexdigest()


class Replica:
    """One site: a layer stack plus delivery bookkeeping.

    ``channels`` maps channel names to the replication layers at the bottom
    of the stack; each must expose ``drain()`` (pending outgoing messages)
    and ``apply_remote(message)``.
    """

    def __init__(self, replica_id: ReplicaId, top: Layer, channels: dict[str, Any]):
        self.id = replica_id
        self.top = top
        self.channels = dict(channels)
        self.clock = VersionVector()
        self._pending: dict[ReplicaId, dict[int, Envelope]] = {}

    def lookup(self) -> Any:
        return self.top.lookup()

    def snapshot(self) -> Any:
        return self.top.snapshot()

    def layers(self) -> list[Layer]:
        return walk_layers(self.top)

    def modify(self, op: Any) -> list[Envelope]:
        if op is None:
            return []
        self.top.modify(op)
        out = []
        rid = self.id
        for name, layer in self.channels.items():
            messages = layer.drain()
            if messages:
                base = self.clock[rid]
                out.extend(Envelope(rid, base + k, m, name) for k, m in enumerate(messages, 1))
                self.clock.advance(rid, base + len(messages))
        return out

    def deliver(self, envelope: Envelope) -> list[Envelope]:
        """Integrate ``envelope``; returns the envelopes applied by this call.

        Envelopes already seen are ignored; envelopes arriving ahead of their
        per-origin predecessor are buffered until the gap is filled.
        """
        origin = envelope.origin
        if origin == self.id or envelope.seq <= self.clock[origin]:
            return []
        if envelope.seq > self.clock[origin] + 1:
            self._pending.setdefault(origin, {})[envelope.seq] = envelope
            return []
        applied = [envelope]
        self._apply(envelope)
        waiting = self._pending.get(origin)
        while waiting:
            nxt = waiting.pop(self.clock[origin] + 1, None)
            if nxt is None:
                break
            self._apply(nxt)
            applied.append(nxt)
        if waiting == {}:
            del self._pending[origin]
        return applied

    def _apply(self, envelope: Envelope) -> None:
        try:
            layer = self.channels[envelope.channel]
        except KeyError:
            raise InvalidOperation(f"unknown channel {envelope.channel!r}") from None
        layer.apply_remote(envelope.payload)
        self.clock.advance(envelope.origin, envelope.seq)

    def buffered(self) -> int:
        return sum(len(v) for v in self._pending.values())

    def state(self) -> Any:
        return tuple(layer.state() for layer in self.layers())

    def state_size(self) -> int:
        """Bytes in ``codec.dumps(self.state())``, computed from per-layer sizes."""
        layers = self.layers()
        return codec.container_size(len(layers), sum(layer.state_size() for layer in layers))

    def __iter__(self) -> Iterator[Layer]:
        return iter(self.layers())
