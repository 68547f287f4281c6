"""Stack composition expressions.

A stack is written as ``kind(key=value,...)``, for example
``ordered-tree(connect=reappear,set=orset,pi=logoot)``. Parsing validates
every component name and returns a factory building one replica per call.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

from .core import Replica, ReplicaId
from .dag import DagLayer
from .ordered_tree import IncrementalOrderedTreeLayer, OrderedTreeLayer
from .ordering import ORDERINGS, IncrementalSequenceLayer, SequenceLayer, make_ordering
from .sets import SET_TYPES, make_set
from .tree import POLICIES, connect

Builder = Callable[..., Replica]

BOOLS = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


class StackSpecError(ValueError):
    pass


@dataclass
class StackKind:
    builder: Builder
    options: dict[str, tuple]  # key -> (allowed values or None for free text, default)
    workload: str


def _set_stack(rid, seed, set):
    s = make_set(set, rid)
    return Replica(rid, s, {"main": s})


def _sequence_stack(rid, seed, set, pi, incremental):
    s = make_set(set, rid)
    layer_cls = IncrementalSequenceLayer if incremental else SequenceLayer
    top = layer_cls(s, make_ordering(pi, rid, seed))
    return Replica(rid, top, {"main": s})


def _tree_stack(rid, seed, set, connect_policy, incremental, lost_found):
    s = make_set(set, rid)
    top = connect(connect_policy, s, incremental=incremental, lost_found=lost_found or None)
    return Replica(rid, top, {"main": s})


def _ordered_tree_stack(rid, seed, set, connect_policy, pi, incremental):
    s = make_set(set, rid)
    t = connect(connect_policy, s, incremental=incremental)
    layer_cls = IncrementalOrderedTreeLayer if incremental else OrderedTreeLayer
    return Replica(rid, layer_cls(t, make_ordering(pi, rid, seed)), {"main": s})


def _dag_stack(rid, seed, set):
    vertices, edges = make_set(set, rid), make_set(set, rid)
    return Replica(rid, DagLayer(vertices, edges, rid), {"vertices": vertices, "edges": edges})


_SET = (tuple(SET_TYPES), "orset")
_PI = (tuple(ORDERINGS), "logoot")
_INC = (tuple(BOOLS), "true")
_CONNECT = (POLICIES, "reappear")

KINDS: dict[str, StackKind] = {
    "set": StackKind(_set_stack, {"set": _SET}, "set"),
    "sequence": StackKind(_sequence_stack, {"set": _SET, "pi": _PI, "incremental": _INC}, "sequence"),
    "tree": StackKind(
        _tree_stack,
        {"set": _SET, "connect": _CONNECT, "incremental": _INC, "lost-found": (None, "")},
        "tree",
    ),
    "ordered-tree": StackKind(
        _ordered_tree_stack,
        {"set": _SET, "connect": _CONNECT, "pi": _PI, "incremental": _INC},
        "ordered-tree",
    ),
    "dag": StackKind(_dag_stack, {"set": _SET}, "dag"),
}

# Stacks covered by the convergence suite.
SHIPPED = [
    "sequence(set=orset,pi=logoot)",
    "sequence(set=orset,pi=content)",
    "sequence(set=counterset,pi=logoot)",
    "sequence(set=counterset,pi=content)",
    "tree(connect=skip,set=orset)",
    "tree(connect=reappear,set=orset)",
    "tree(connect=root,set=orset)",
    "tree(connect=compact,set=orset)",
    "ordered-tree(connect=skip,set=orset,pi=logoot)",
    "ordered-tree(connect=reappear,set=orset,pi=logoot)",
    "dag(set=orset)",
]


def register(name: str, builder: Builder, options: dict[str, tuple] | None = None, workload: str | None = None):
    """Add a stack kind (``builder(replica_id, seed, **options) -> Replica``)."""
    KINDS[name] = StackKind(builder, dict(options or {}), workload or name)


def unregister(name: str) -> None:
    KINDS.pop(name, None)


_SPEC_RE = re.compile(r"^\s*([A-Za-z][\w-]*)\s*(?:\((.*)\))?\s*$")


@dataclass
class StackFactory:
    kind: str
    options: dict[str, str]
    seed: int = 0
    workload: str = field(init=False)

    def __post_init__(self):
        self.workload = KINDS[self.kind].workload

    @property
    def spec(self) -> str:
        inner = ",".join(f"{k}={v}" for k, v in sorted(self.options.items()))
        return f"{self.kind}({inner})"

    def __call__(self, replica_id: ReplicaId) -> Replica:
        kind = KINDS[self.kind]
        kwargs = {}
        for key, value in self.options.items():
            allowed, _ = kind.options[key]
            arg = key.replace("-", "_")
            if arg == "connect":
                arg = "connect_policy"
            kwargs[arg] = BOOLS[value] if allowed is _INC[0] else value
        return kind.builder(replica_id, self.seed, **kwargs)


def parse(text: str, seed: int = 0) -> StackFactory:
    m = _SPEC_RE.match(text)
    if not m:
        raise StackSpecError(f"cannot parse stack expression {text!r}")
    name, body = m.group(1), m.group(2)
    if name not in KINDS:
        raise StackSpecError(f"unknown stack {name!r}; valid: {', '.join(KINDS)}")
    kind = KINDS[name]
    options = {key: default for key, (_, default) in kind.options.items()}
    for item in filter(None, (s.strip() for s in (body or "").split(","))):
        key, sep, value = item.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise StackSpecError(f"expected key=value, got {item!r}")
        if key not in kind.options:
            valid = ", ".join(kind.options) or "none"
            raise StackSpecError(f"unknown option {key!r} for {name}; valid: {valid}")
        allowed, _ = kind.options[key]
        if allowed is not None and value not in allowed:
            raise StackSpecError(f"unknown {key} {value!r}; valid: {', '.join(allowed)}")
        options[key] = value
    return StackFactory(name, options, seed)
