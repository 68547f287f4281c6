"""Position identifiers and the sequence layer built on a replicated set.

A sequence is stored as a set of ``Couple(label, pi)``; reading it sorts the
couples by position identifier. Identifiers are tuples of components
compared lexicographically, so a proper prefix sorts first and there is
always room for a new identifier between two distinct ones.

Two component schemes are shipped:

* ``LogootOrdering``: ``(digit, origin, clock)``, unique per generation.
* ``ContentOrdering``: ``(digit, content_key)`` where the key hashes the
  label, so two sites inserting the same label between the same neighbours
  produce the same couple and the set keeps a single copy.
"""

from __future__ import annotations

import hashlib
import logging
import random
from bisect import bisect_left
from dataclasses import dataclass
from typing import Any, Callable, Hashable, Iterable, Sequence

from . import codec
from .core import ADD, DEL, InvalidOperation, Layer, ReplicaId

log = logging.getLogger(__name__)

DIGIT_LIMIT = 2**32
DEFAULT_BOUNDARY = 2**16


@codec.record("pi")
class PositionId(tuple):
    """Tuple of components; hashing and comparison are plain tuple operations."""

    __slots__ = ()

    def __new__(cls, components: Iterable[Sequence[int]] = ()):
        return tuple.__new__(cls, (tuple(c) for c in components))

    @property
    def components(self) -> tuple:
        return tuple(self)

    def _codec_fields(self):
        return (tuple(self),)

    def __str__(self):
        return ":".join(".".join(str(x) for x in c) for c in self)

    def __repr__(self):
        return f"PositionId({self})"


BEGIN = PositionId(())
END = PositionId(((DIGIT_LIMIT,),))


@codec.record("couple", cache=True)
class Couple(tuple):
    """A label paired with its (immutable) position identifier.

    Equality and hashing are those of the ``(label, pi)`` tuple and run in C,
    which matters because tree paths are tuples of couples used as set and
    dict keys. Ordering is by identifier first.
    """

    def __new__(cls, label: Hashable, pi: PositionId):
        self = tuple.__new__(cls, (label, pi))
        self._key = (pi, type(label).__name__, label)
        self._enc = None
        return self

    def __getnewargs__(self):
        return tuple(self)

    @property
    def label(self):
        return self[0]

    @property
    def pi(self) -> PositionId:
        return self[1]

    def _codec_fields(self):
        return tuple(self)

    def sort_key(self):
        return self._key

    def __lt__(self, other: Couple):
        return self._key < other._key

    def __le__(self, other: Couple):
        return self._key <= other._key

    def __gt__(self, other: Couple):
        return self._key > other._key

    def __ge__(self, other: Couple):
        return self._key >= other._key

    def __repr__(self):
        return f"Couple({self[0]!r}, {self[1]})"


def _between(
    p: tuple,
    q: tuple,
    fresh: Callable[[int, int], tuple],
    filler: Callable[[], tuple],
) -> tuple:
    """Components strictly between ``p`` and ``q`` (``p < q``).

    ``fresh(lo, hi)`` builds a component with a digit in ``(lo, hi)`` and is
    always used for the last component, so generated identifiers never end
    with digit 0. ``filler()`` builds a digit-0 component, used only to step
    below a neighbour whose digit leaves no gap.
    """
    out = []
    tied_q = True
    i = 0
    while True:
        p_here = i < len(p)
        lo = p[i][0] if p_here else 0
        hi = q[i][0] if tied_q else DIGIT_LIMIT
        if hi - lo >= 2:
            out.append(fresh(lo, hi))
            return tuple(out)
        if p_here:
            c = p[i]
            out.append(c)
            if tied_q and c != q[i]:
                tied_q = False
        elif hi == 1:
            out.append(filler())
            tied_q = False
        else:
            # q continues below a digit-0 component; follow it.
            out.append(q[i])
        i += 1


class Ordering:
    """Interface used by the sequence and ordered-tree layers."""

    def generate_pi(self, c1: Couple | None, c2: Couple | None, label: Any = None) -> PositionId:
        """Identifier strictly between ``c1`` and ``c2`` (``None`` = the sentinels)."""
        p = c1.pi if c1 is not None else BEGIN
        q = c2.pi if c2 is not None else END
        if not p < q:
            raise ValueError(f"generate_pi needs c1 < c2, got {p} and {q}")
        return PositionId(self._between(p.components, q.components, label))

    def order(self, couples: Iterable[Couple]) -> list[Couple]:
        return sorted(couples, key=Couple.sort_key)

    def get_pos(self, pi: PositionId, label: Any, couples: Sequence[Couple]) -> int:
        """Index at which ``(label, pi)`` goes in the sorted list ``couples``."""
        return bisect_left(couples, Couple(label, pi)._key, key=Couple.sort_key)

    def _between(self, p, q, label):
        raise NotImplementedError


class LogootOrdering(Ordering):
    """Bounded digits with random-in-gap choice, seeded per replica."""

    def __init__(
        self,
        replica_id: ReplicaId,
        seed: int = 0,
        boundary: int = DEFAULT_BOUNDARY,
    ):
        self.replica_id = replica_id
        self.boundary = boundary
        self.clock = 0
        self._rng = random.Random(f"logoot:{seed}:{replica_id}")

    def _between(self, p, q, label):
        self.clock += 1
        site, clock, rng, boundary = self.replica_id, self.clock, self._rng, self.boundary

        def fresh(lo, hi):
            top = min(hi - 1, lo + boundary)
            return (rng.randint(lo + 1, top), site, clock)

        return _between(p, q, fresh, lambda: (0, site, clock))


def content_key(label: Any) -> int:
    return int.from_bytes(hashlib.blake2b(codec.dumps(label), digest_size=8).digest(), "big")


class ContentOrdering(Ordering):
    """Deterministic in (neighbours, label): identical concurrent inserts coincide."""

    def __init__(self, replica_id: ReplicaId | None = None, seed: int = 0, boundary: int = DEFAULT_BOUNDARY):
        self.boundary = boundary

    def _between(self, p, q, label):
        key = content_key(label)
        boundary = self.boundary

        def fresh(lo, hi):
            span = min(hi - 1, lo + boundary) - lo
            return (lo + 1 + key % span, key)

        return _between(p, q, fresh, lambda: (0, key))


ORDERINGS = {"logoot": LogootOrdering, "content": ContentOrdering}


def make_ordering(kind: str, replica_id: ReplicaId, seed: int = 0) -> Ordering:
    try:
        cls = ORDERINGS[kind]
    except KeyError:
        raise ValueError(f"unknown ordering {kind!r}; valid: {', '.join(ORDERINGS)}") from None
    return cls(replica_id, seed=seed)


@dataclass(frozen=True)
class SequenceOperation:
    type: str  # "add" | "del"
    position: int
    label: Any = None


def insert(position: int, label: Any) -> SequenceOperation:
    return SequenceOperation(ADD, position, label)


def delete(position: int) -> SequenceOperation:
    return SequenceOperation(DEL, position)


class SequenceLayer(Layer):
    """Sequence view recomputed from the inner set on every read."""

    incremental = False

    def __init__(self, inner: Layer, ordering: Ordering):
        super().__init__()
        self.inner = inner
        self.ordering = ordering

    def inner_layers(self):
        return (self.inner,)

    def couples(self) -> list[Couple]:
        return self.ordering.order(self.inner.lookup())

    def lookup(self) -> list:
        return [c.label for c in self.couples()]

    def snapshot(self):
        return codec.to_json(self.lookup())

    def __len__(self):
        return len(self.inner.lookup())

    def modify(self, change: SequenceOperation):
        if not isinstance(change, SequenceOperation):
            raise InvalidOperation(f"expected SequenceOperation, got {type(change).__name__}")
        current = self.couples()
        pos = change.position
        if change.type == ADD:
            if not 0 <= pos <= len(current):
                raise InvalidOperation(f"insert position {pos} outside [0, {len(current)}]")
            before = current[pos - 1] if pos > 0 else None
            after = current[pos] if pos < len(current) else None
            couple = Couple(change.label, self.ordering.generate_pi(before, after, change.label))
            self.inner.add(couple)
        elif change.type == DEL:
            if not 0 <= pos < len(current):
                raise InvalidOperation(f"delete position {pos} outside [0, {len(current)})")
            self.inner.remove(current[pos])
        else:
            raise InvalidOperation(f"unknown sequence operation {change.type!r}")


class IncrementalSequenceLayer(SequenceLayer):
    """Keeps the ordered couple list and patches it on inner-set notifications."""

    incremental = True

    def __init__(self, inner: Layer, ordering: Ordering):
        super().__init__(inner, ordering)
        self._list: list[Couple] = ordering.order(inner.lookup())
        self._body = sum(codec.size(c) for c in self._list)  # encoded size of the list items
        inner.subscribe(self.update)

    def couples(self) -> list[Couple]:
        return self._list

    def __len__(self):
        return len(self._list)

    def update(self, kind: str, couple: Couple) -> None:
        if kind == ADD:
            self._list.insert(self.ordering.get_pos(couple.pi, couple.label, self._list), couple)
            self._body += codec.size(couple)
            return
        i = bisect_left(self._list, couple._key, key=Couple.sort_key)
        if i < len(self._list) and self._list[i] == couple:
            del self._list[i]
            self._body -= codec.size(couple)
        else:
            log.warning("sequence layer: removal of unknown couple %r ignored", couple)

    def state(self):
        return tuple(self._list)

    def state_size(self) -> int:
        return codec.container_size(len(self._list), self._body)
