"""Ordered trees: position identifiers on top of a connected tree.

The tree layer below stores paths of ``Couple(label, pi)``; this layer sorts
siblings by position identifier and lets the application address nodes by
1-based integer paths such as ``(2, 1)`` (first child of the second root
child).
"""

from __future__ import annotations

import logging
from bisect import bisect_left
from dataclasses import dataclass
from typing import Any

from . import codec
from .core import ADD, DEL, InvalidOperation, Layer
from .ordering import Couple, Ordering
from .tree import TreeNode, TreeOperation

log = logging.getLogger(__name__)

IntPath = tuple


@dataclass(frozen=True)
class OrderedOperation:
    type: str  # "add" | "del"
    path: IntPath
    label: Any = None


def insert(path, label) -> OrderedOperation:
    return OrderedOperation(ADD, tuple(path), label)


def delete(path) -> OrderedOperation:
    return OrderedOperation(DEL, tuple(path))


def _key(node: OrderedNode):
    return node.couple._key


class OrderedNode:
    __slots__ = ("couple", "parent", "children", "index", "slot", "_size")

    def __init__(self, couple: Couple | None = None, parent: OrderedNode | None = None):
        self.couple = couple
        self.parent = parent
        self.children: list[OrderedNode] = []
        self.index: dict[Couple, OrderedNode] = {}
        self.slot = -1
        self._size: int | None = None  # cached encoded size of state()

    def touch(self) -> None:
        node = self
        while node is not None and node._size is not None:
            node._size = None
            node = node.parent

    @property
    def label(self):
        return self.couple.label if self.couple is not None else None

    @property
    def pi(self):
        return self.couple.pi if self.couple is not None else None

    def insert_child(self, child: OrderedNode) -> None:
        self.children.insert(bisect_left(self.children, child.couple._key, key=_key), child)
        self.index[child.couple] = child
        self.touch()

    def remove_child(self, child: OrderedNode) -> None:
        self.children.remove(child)  # nodes compare by identity
        del self.index[child.couple]
        self.touch()

    def position(self) -> int:
        """1-based rank among siblings."""
        return bisect_left(self.parent.children, self.couple._key, key=_key) + 1

    def int_path(self) -> IntPath:
        out = []
        node = self
        while node.parent is not None:
            out.append(node.position())
            node = node.parent
        return tuple(reversed(out))

    def couple_path(self) -> tuple:
        out = []
        node = self
        while node.parent is not None:
            out.append(node.couple)
            node = node.parent
        return tuple(reversed(out))

    def labels(self) -> list:
        return [c.label for c in self.children]

    def walk(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def to_json(self) -> dict:
        out: dict[str, Any] = {"label": codec.to_json(self.label)}
        if self.couple is not None:
            out["pi"] = codec.to_json(self.couple.pi.components)
        out["children"] = [c.to_json() for c in self.children]
        return out

    def state(self):
        return (self.couple, tuple(c.state() for c in self.children))

    def state_size(self) -> int:
        if self._size is None:
            kids = codec.container_size(len(self.children), sum(c.state_size() for c in self.children))
            self._size = codec.container_size(2, codec.size(self.couple) + kids)
        return self._size

    def __repr__(self):
        return f"OrderedNode({self.label!r}, {self.int_path()})"


def order_tree(root: TreeNode) -> OrderedNode:
    """Ordered copy of an unordered tree whose labels are couples."""
    out = OrderedNode()
    stack = [(root, out)]
    while stack:
        src, dst = stack.pop()
        for child in sorted(src.children.values(), key=lambda n: n.label._key):
            node = OrderedNode(child.label, dst)
            dst.children.append(node)
            dst.index[child.label] = node
            stack.append((child, node))
    return out


class OrderedTreeLayer(Layer):
    """Non-incremental: sorts the tree below on every read."""

    incremental = False

    def __init__(self, inner: Layer, ordering: Ordering):
        super().__init__()
        self.inner = inner
        self.ordering = ordering

    def inner_layers(self):
        return (self.inner,)

    def tree(self) -> OrderedNode:
        return order_tree(self.inner.lookup())

    def lookup(self) -> OrderedNode:
        return self.tree()

    def snapshot(self):
        return self.tree().to_json()

    def resolve(self, path: IntPath) -> OrderedNode | None:
        node = self.tree()
        for j in path:
            if not 1 <= j <= len(node.children):
                return None
            node = node.children[j - 1]
        return node

    def modify(self, op: OrderedOperation) -> TreeOperation:
        if not isinstance(op, OrderedOperation):
            raise InvalidOperation(f"expected OrderedOperation, got {type(op).__name__}")
        path = tuple(op.path)
        if not path or any(type(j) is not int or j < 1 for j in path):
            raise InvalidOperation(f"bad integer path {path!r}")
        if op.type == ADD:
            parent = self.resolve(path[:-1])
            if parent is None:
                raise InvalidOperation(f"parent of {path!r} does not resolve")
            j, siblings = path[-1], parent.children
            if j > len(siblings) + 1:
                raise InvalidOperation(f"position {j} past the end of {len(siblings)} children")
            before = siblings[j - 2].couple if j >= 2 else None
            after = siblings[j - 1].couple if j <= len(siblings) else None
            couple = Couple(op.label, self.ordering.generate_pi(before, after, op.label))
            tree_op = TreeOperation(ADD, parent.couple_path() + (couple,))
        elif op.type == DEL:
            node = self.resolve(path)
            if node is None:
                raise InvalidOperation(f"{path!r} does not resolve")
            tree_op = TreeOperation(DEL, node.couple_path())
        else:
            raise InvalidOperation(f"unknown ordered-tree operation {op.type!r}")
        self.inner.modify(tree_op)
        return tree_op


class IncrementalOrderedTreeLayer(OrderedTreeLayer):
    """Keeps sorted children lists, patched from the tree layer's node events."""

    incremental = True

    def __init__(self, inner: Layer, ordering: Ordering):
        if not getattr(inner, "incremental", False):
            raise ValueError("the incremental ordered tree needs an incremental tree layer below")
        super().__init__(inner, ordering)
        self.root = order_tree(inner.lookup())
        self._last_prefix: tuple | None = None
        self._last_parent: OrderedNode | None = None
        self._nodes: list[OrderedNode] = []
        for node in self.root.walk():
            if node.parent is not None:
                self._register(node)
        inner.subscribe(self.update)

    def tree(self) -> OrderedNode:
        return self.root

    def _register(self, node: OrderedNode) -> None:
        node.slot = len(self._nodes)
        self._nodes.append(node)

    def _unregister(self, node: OrderedNode) -> None:
        last = self._nodes.pop()
        if last is not node:
            self._nodes[node.slot] = last
            last.slot = node.slot
        node.slot = -1

    def node_count(self) -> int:
        return len(self._nodes)

    def node(self, k: int) -> OrderedNode:
        """The k-th registered node; order is arbitrary but deterministic."""
        return self._nodes[k]

    def _find(self, couples: tuple) -> OrderedNode | None:
        node = self.root
        for c in couples:
            node = node.index.get(c)
            if node is None:
                return None
        return node

    def update(self, kind: str, path: tuple) -> None:
        prefix = path[:-1]
        # subtree events arrive in runs under one parent; reuse the last one found
        if prefix == self._last_prefix and self._last_parent.slot != -1:
            node = self._last_parent
        else:
            node = self.root
            for c in prefix:
                node = node.index.get(c)
                if node is None:
                    log.warning("ordered tree: event %s under unknown parent %r ignored", kind, path)
                    return
            if prefix:
                self._last_prefix, self._last_parent = prefix, node
        parent, couple = node, path[-1]
        if kind == ADD:
            node = OrderedNode(couple, parent)
            parent.insert_child(node)
            self._register(node)
            return
        node = parent.index.get(couple)
        if node is None or node.children:
            log.warning("ordered tree: removal of unknown or inner node %r ignored", path)
            return
        parent.remove_child(node)
        self._unregister(node)

    def state(self):
        return self.root.state()

    def state_size(self) -> int:
        return self.root.state_size()
