"""Task-dependency graphs: a vertex set, an edge set and an un-cycling view.

The view keeps edges whose endpoints both exist, admitted in ascending
creation-stamp order; an edge is suppressed if a breadth-first search finds
that it would close a cycle with the edges admitted before it. Since the
view only depends on the two set states, every replica suppresses the same
edges.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Any, Hashable, Iterable

from . import codec
from .core import ADD, InvalidOperation, Layer, ReplicaId
from .tree import label_key

ADD_VERTEX, REMOVE_VERTEX = "add_vertex", "remove_vertex"
ADD_EDGE, REMOVE_EDGE = "add_edge", "remove_edge"


@codec.record("vertex")
@dataclass(frozen=True)
class Vertex:
    id: Hashable
    payload: Any = None

    def _codec_fields(self):
        return (self.id, self.payload)


@codec.record("edge")
@dataclass(frozen=True)
class Edge:
    src: Hashable
    dst: Hashable
    stamp: tuple  # (counter, replica)

    def _codec_fields(self):
        return (self.src, self.dst, self.stamp)

    def sort_key(self):
        return (self.stamp, label_key(self.src), label_key(self.dst))


@dataclass(frozen=True)
class DagOperation:
    type: str
    a: Hashable
    b: Hashable = None
    payload: Any = None


def add_vertex(v, payload=None) -> DagOperation:
    return DagOperation(ADD_VERTEX, v, payload=payload)


def remove_vertex(v) -> DagOperation:
    return DagOperation(REMOVE_VERTEX, v)


def add_edge(u, v) -> DagOperation:
    return DagOperation(ADD_EDGE, u, v)


def remove_edge(u, v) -> DagOperation:
    return DagOperation(REMOVE_EDGE, u, v)


@dataclass(frozen=True)
class DagView:
    vertices: dict  # id -> payload
    retained: tuple
    suppressed: tuple

    def edges(self) -> set[tuple]:
        return {(e.src, e.dst) for e in self.retained}

    def successors(self, v) -> list:
        return [e.dst for e in self.retained if e.src == v]

    def reaches(self, src, dst) -> bool:
        return _reaches(_adjacency(self.retained), src, dst)

    def to_json(self) -> dict:
        ids = sorted(self.vertices, key=label_key)
        return {
            "vertices": [[codec.to_json(v), codec.to_json(self.vertices[v])] for v in ids],
            "retained": [codec.to_json(e) for e in self.retained],
            "suppressed": [codec.to_json(e) for e in self.suppressed],
        }

    def to_dot(self) -> str:
        lines = ["digraph dag {"]
        for v in sorted(self.vertices, key=label_key):
            lines.append(f'  "{v}";')
        for e in self.retained:
            lines.append(f'  "{e.src}" -> "{e.dst}";')
        for e in self.suppressed:
            lines.append(f'  "{e.src}" -> "{e.dst}" [style=dashed];')
        lines.append("}")
        return "\n".join(lines)


def _adjacency(edges: Iterable[Edge]) -> dict:
    adj: dict = {}
    for e in edges:
        adj.setdefault(e.src, []).append(e.dst)
    return adj


def _reaches(adj: dict, src, dst) -> bool:
    if src == dst:
        return True
    seen = {src}
    queue = deque([src])
    while queue:
        for nxt in adj.get(queue.popleft(), ()):
            if nxt == dst:
                return True
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return False


def uncycle_lookup(vertex_elems: Iterable[Vertex], edge_elems: Iterable[Edge]) -> DagView:
    vertices: dict = {}
    for v in sorted(vertex_elems, key=lambda v: codec.dumps(v.payload)):
        vertices.setdefault(v.id, v.payload)
    adj: dict = {}
    retained, suppressed = [], []
    for e in sorted(edge_elems, key=Edge.sort_key):
        if e.src not in vertices or e.dst not in vertices:
            continue
        if _reaches(adj, e.dst, e.src):
            suppressed.append(e)
        else:
            adj.setdefault(e.src, []).append(e.dst)
            retained.append(e)
    return DagView(vertices, tuple(retained), tuple(suppressed))


class DagLayer(Layer):
    """Un-cycling layer over two replicated sets; the view is cached until either changes."""

    def __init__(self, vertex_set: Layer, edge_set: Layer, replica_id: ReplicaId):
        super().__init__()
        self.vertex_set = vertex_set
        self.edge_set = edge_set
        self.replica_id = replica_id
        self._clock = max((e.stamp[0] for e in edge_set.lookup()), default=0)
        self._cache: DagView | None = None
        vertex_set.subscribe(self._changed)
        edge_set.subscribe(self._edge_changed)

    def inner_layers(self):
        return (self.vertex_set, self.edge_set)

    def _changed(self, kind, element):
        self._cache = None

    def _edge_changed(self, kind, edge: Edge):
        if kind == ADD and edge.stamp[0] > self._clock:
            self._clock = edge.stamp[0]
        self._cache = None

    def lookup(self) -> DagView:
        if self._cache is None:
            self._cache = uncycle_lookup(self.vertex_set.lookup(), self.edge_set.lookup())
        return self._cache

    def snapshot(self):
        return self.lookup().to_json()

    def modify(self, op: DagOperation):
        if not isinstance(op, DagOperation):
            raise InvalidOperation(f"expected DagOperation, got {type(op).__name__}")
        view = self.lookup()
        if op.type == ADD_VERTEX:
            if op.a in view.vertices:
                raise InvalidOperation(f"vertex {op.a!r} already exists")
            self.vertex_set.add(Vertex(op.a, op.payload))
        elif op.type == REMOVE_VERTEX:
            if op.a not in view.vertices:
                raise InvalidOperation(f"no vertex {op.a!r}")
            incident = [e for e in view.retained + view.suppressed if op.a in (e.src, e.dst)]
            doomed = [v for v in self.vertex_set.lookup() if v.id == op.a]
            for e in incident:
                self.edge_set.remove(e)
            for v in doomed:
                self.vertex_set.remove(v)
        elif op.type == ADD_EDGE:
            for v in (op.a, op.b):
                if v not in view.vertices:
                    raise InvalidOperation(f"no vertex {v!r}")
            if view.reaches(op.b, op.a):
                raise InvalidOperation(f"edge {op.a!r}->{op.b!r} would close a cycle")
            if (op.a, op.b) in view.edges():
                raise InvalidOperation(f"edge {op.a!r}->{op.b!r} already exists")
            self._clock += 1
            self.edge_set.add(Edge(op.a, op.b, (self._clock, self.replica_id)))
        elif op.type == REMOVE_EDGE:
            doomed = [e for e in view.retained if (e.src, e.dst) == (op.a, op.b)]
            if not doomed:
                raise InvalidOperation(f"no edge {op.a!r}->{op.b!r}")
            for e in doomed:
                self.edge_set.remove(e)
        else:
            raise InvalidOperation(f"unknown dag operation {op.type!r}")

    def state(self):
        return self._clock
