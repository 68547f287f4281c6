"""Unordered trees over a replicated set of label paths.

Each stored path ``l1 l2 ... ln`` names a node. A path with a missing
proper prefix is an *orphan*; the connection policy decides where it shows
up in the tree view:

``skip``
    orphans are hidden.
``reappear``
    the missing ancestors are recreated as ghost nodes.
``root``
    the orphan subtree hangs under the root (or a lost+found node), from the
    deepest missing prefix on. Same-label siblings merge.
``compact``
    the orphan subtree hangs under its longest non-orphan prefix.

``connect_lookup`` is the declarative definition; the ``*Connect`` classes
maintain the same view incrementally from set notifications and emit
``(kind, view_path)`` events for layers stacked above.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Hashable, Iterable, Iterator

from . import codec
from .core import ADD, DEL, InvalidOperation, Layer

log = logging.getLogger(__name__)

SKIP, REAPPEAR, ROOT, COMPACT = "skip", "reappear", "root", "compact"
POLICIES = (SKIP, REAPPEAR, ROOT, COMPACT)

Path = tuple


def label_key(label: Any):
    return (type(label).__name__, label)


def path_key(path: Path):
    return (len(path), tuple(label_key(l) for l in path))


@dataclass(frozen=True)
class TreeOperation:
    type: str  # "add" | "del"
    path: Path

    def __post_init__(self):
        if not self.path:
            raise InvalidOperation("tree operations need a nonempty path")


def add(path: Iterable[Hashable]) -> TreeOperation:
    return TreeOperation(ADD, tuple(path))


def remove(path: Iterable[Hashable]) -> TreeOperation:
    return TreeOperation(DEL, tuple(path))


class TreeNode:
    """View node. ``paths`` holds the stored paths this node stands for.

    Under the reappear policy a node with no stored path is a ghost.
    """

    __slots__ = ("label", "parent", "children", "paths", "_size", "_own")

    def __init__(self, label: Hashable = None, parent: TreeNode | None = None):
        self.label = label
        self.parent = parent
        self.children: dict[Hashable, TreeNode] = {}
        self.paths: set[Path] = set()
        self._size: int | None = None  # cached encoded size of state()
        self._own: int | None = None  # cached size of the label and paths fields

    def touch(self) -> None:
        """Drop cached sizes here and above (a clean node has clean descendants)."""
        node = self
        while node is not None and node._size is not None:
            node._size = None
            node = node.parent

    def add_path(self, path: Path) -> None:
        self.paths.add(path)
        self._own = None
        self.touch()

    def discard_path(self, path: Path) -> None:
        self.paths.discard(path)
        self._own = None
        self.touch()

    @property
    def ghost(self) -> bool:
        return self.parent is not None and not self.paths

    def path(self) -> Path:
        labels = []
        node = self
        while node.parent is not None:
            labels.append(node.label)
            node = node.parent
        return tuple(reversed(labels))

    def depth(self) -> int:
        d, node = 0, self
        while node.parent is not None:
            d, node = d + 1, node.parent
        return d

    def sorted_children(self) -> list[TreeNode]:
        return sorted(self.children.values(), key=lambda n: label_key(n.label))

    def walk(self) -> Iterator[TreeNode]:
        """Pre-order, children in label order."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.sorted_children()))

    def view_paths(self) -> set[Path]:
        return {n.path() for n in self.walk() if n.parent is not None}

    def to_json(self, ghosts: bool = True) -> dict:
        out: dict[str, Any] = {"label": codec.to_json(self.label)}
        if ghosts and self.ghost:
            out["ghost"] = True
        out["children"] = [c.to_json(ghosts) for c in self.sorted_children()]
        return out

    def state(self):
        return (
            self.label,
            frozenset(self.paths),
            {label: child.state() for label, child in self.children.items()},
        )

    def state_size(self) -> int:
        if self._size is None:
            size, box = codec.size, codec.container_size
            if self._own is None:
                self._own = size(self.label) + box(len(self.paths), sum(size(p) for p in self.paths))
            kids = box(len(self.children), sum(size(k) + c.state_size() for k, c in self.children.items()))
            self._size = box(3, self._own + kids)
        return self._size

    def __repr__(self):
        return f"TreeNode({self.path()!r})"


def render(root: TreeNode, ghosts: bool = True) -> str:
    """Indented text form, two spaces per level, children in label order."""
    lines = []

    def visit(node, depth):
        for child in node.sorted_children():
            mark = " (ghost)" if ghosts and child.ghost else ""
            lines.append("  " * depth + str(child.label) + mark)
            visit(child, depth + 1)

    visit(root, 0)
    return "\n".join(lines)


def _gaps(x: Path, ls) -> list[int]:
    """Lengths k in [1, n) whose prefix x[:k] is absent from ``ls``."""
    return [k for k in range(1, len(x)) if x[:k] not in ls]


def connect_mapping(ls: Iterable[Path], policy: str, lost_found: Hashable = None) -> dict[Path, set[Path]]:
    """View path -> stored paths it stands for, following the policy rules.

    Non-orphans keep their own path. Orphans are then handled shortest first,
    then in label order. For ``compact`` the orphan goes under its longest
    non-orphan prefix, i.e. just above the first missing prefix.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; valid: {', '.join(POLICIES)}")
    ls = set(ls)
    lt: dict[Path, set[Path]] = {(): set()}
    orphans = []
    for x in ls:
        if _gaps(x, ls):
            orphans.append(x)
        else:
            lt.setdefault(x, set()).add(x)
    orphans.sort(key=path_key)
    for x in orphans:
        gaps = _gaps(x, ls)
        if policy == SKIP:
            continue
        if policy == REAPPEAR:
            for k in range(1, len(x)):
                lt.setdefault(x[:k], set())
            view = x
        elif policy == ROOT:
            view = x[gaps[-1]:]
            if lost_found is not None:
                lt.setdefault((lost_found,), set())
                view = (lost_found,) + view
        else:
            view = x[: gaps[0] - 1] + x[gaps[-1]:]
        lt.setdefault(view, set()).add(x)
    return lt


def build_tree(mapping: dict[Path, set[Path]]) -> TreeNode:
    root = TreeNode()
    index = {(): root}
    for view in sorted(mapping, key=len):
        if not view:
            continue
        parent = index.get(view[:-1])
        if parent is None:
            raise AssertionError(f"view path {view!r} has no parent in the mapping")
        node = TreeNode(view[-1], parent)
        node.paths = set(mapping[view])
        parent.children[view[-1]] = node
        index[view] = node
    return root


def connect_lookup(ls: Iterable[Path], policy: str, lost_found: Hashable = None) -> TreeNode:
    return build_tree(connect_mapping(ls, policy, lost_found))


def node_at(root: TreeNode, path: Path) -> TreeNode | None:
    node = root
    for label in path:
        node = node.children.get(label)
        if node is None:
            return None
    return node


class _ConnectBase(Layer):
    policy: str = ""
    # node whose stored paths a local delete is removing right now
    _hint: TreeNode | None = None

    def __init__(self, inner: Layer, lost_found: Hashable = None):
        super().__init__()
        self.inner = inner
        self.lost_found = lost_found

    def inner_layers(self):
        return (self.inner,)

    def tree(self) -> TreeNode:
        raise NotImplementedError

    def lookup(self) -> TreeNode:
        return self.tree()

    def snapshot(self):
        return self.tree().to_json(ghosts=self.policy == REAPPEAR)

    def node_at(self, path: Path) -> TreeNode | None:
        return node_at(self.tree(), tuple(path))

    @staticmethod
    def _origin_paths(node: TreeNode) -> set[Path]:
        if node.parent is None:
            return {()}
        return node.paths or {node.path()}

    def modify(self, op: TreeOperation) -> list[tuple[str, Path]]:
        """Translate a view operation into set operations; returns them."""
        if not isinstance(op, TreeOperation):
            raise InvalidOperation(f"expected TreeOperation, got {type(op).__name__}")
        tree = self.tree()
        if op.type == ADD:
            parent = node_at(tree, op.path[:-1])
            if parent is None:
                raise InvalidOperation(f"parent of {op.path!r} is not in the tree")
            label = op.path[-1]
            existing = parent.children.get(label)
            if existing is not None and existing.paths:
                raise InvalidOperation(f"{op.path!r} already exists")
            ops = [(ADD, q + (label,)) for q in sorted(self._origin_paths(parent), key=path_key)]
        elif op.type == DEL:
            node = node_at(tree, op.path)
            if node is None:
                raise InvalidOperation(f"{op.path!r} is not in the tree")
            # reverse pre-order lists descendants before their ancestors
            nodes, stack = [], [node]
            while stack:
                n = stack.pop()
                nodes.append(n)
                stack.extend(n.children.values())
            ops = []
            remove = self.inner.remove
            try:
                for n in reversed(nodes):
                    ps = list(n.paths) if len(n.paths) < 2 else sorted(n.paths, key=path_key, reverse=True)
                    self._hint = n
                    for p in ps:
                        ops.append((DEL, p))
                        remove(p)
            finally:
                self._hint = None
            return ops
        else:
            raise InvalidOperation(f"unknown tree operation {op.type!r}")
        for _, p in ops:
            self.inner.add(p)
        return ops


class ConnectLayer(_ConnectBase):
    """Non-incremental: the view is recomputed from the inner set on each read."""

    incremental = False

    def __init__(self, inner: Layer, policy: str, lost_found: Hashable = None):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}; valid: {', '.join(POLICIES)}")
        super().__init__(inner, lost_found)
        self.policy = policy

    def tree(self) -> TreeNode:
        return connect_lookup(self.inner.lookup(), self.policy, self.lost_found)


class _IncrementalConnect(_ConnectBase):
    incremental = True

    def __init__(self, inner: Layer, lost_found: Hashable = None):
        super().__init__(inner, lost_found)
        self.root = TreeNode()
        for path in sorted(inner.lookup(), key=path_key):
            self.update(ADD, path)
        inner.subscribe(self.update)

    def tree(self) -> TreeNode:
        return self.root

    def update(self, kind: str, path: Path) -> None:
        raise NotImplementedError

    def _create(self, parent: TreeNode, label: Hashable) -> TreeNode:
        node = TreeNode(label, parent)
        parent.children[label] = node
        parent.touch()
        if self._observers:
            self._notify(ADD, node.path())
        return node

    def _destroy(self, node: TreeNode, path: Path | None = None) -> None:
        assert not node.children, "only leaves are destroyed"
        if self._observers:
            self._notify(DEL, node.path() if path is None else path)
        parent = node.parent
        if parent._size is not None:
            parent.touch()
        del parent.children[node.label]
        node.parent = None

    def _prune(self, node: TreeNode, path: Path | None = None) -> None:
        """Destroy ``node`` and then its ancestors while they are empty leaves.

        ``path``, if given, is the view path of ``node``.
        """
        while node.parent is not None and not node.paths and not node.children:
            parent = node.parent
            self._destroy(node, path)
            node = parent
            if path is not None:
                path = path[:-1]

    def state(self):
        return self.root.state()

    def state_size(self) -> int:
        return self.root.state_size()


class ReappearConnect(_IncrementalConnect):
    """Missing ancestors are kept as ghosts until no stored descendant remains."""

    policy = REAPPEAR

    def update(self, kind: str, path: Path) -> None:
        if kind == ADD:
            node = self.root
            for label in path[:-1]:
                child = node.children.get(label)
                if child is None:
                    child = self._create(node, label)  # reappear as ghost
                node = child
            child = node.children.get(path[-1])
            if child is None:
                child = self._create(node, path[-1])
            child.add_path(path)
            return
        node = self._hint
        if node is None or path not in node.paths:
            node = self.root
            for label in path:
                node = node.children.get(label)
                if node is None:
                    break
        try:
            node.paths.remove(path)
        except (AttributeError, KeyError):
            log.warning("reappear: removal of unknown path %r ignored", path)
            return
        node._own = None
        node.touch()
        if not node.children:
            # Purge the leaf and then every ghost ancestor left childless.
            self._prune(node, path)


class RootConnect(_IncrementalConnect):
    """Orphans hang under the root (or ``lost_found``); equal labels there merge."""

    policy = ROOT

    def __init__(self, inner: Layer, lost_found: Hashable = None):
        self.path2node: dict[Path, TreeNode] = {}
        super().__init__(inner, lost_found)

    def _home(self, create: bool = True) -> TreeNode | None:
        if self.lost_found is None:
            return self.root
        home = self.root.children.get(self.lost_found)
        if home is None and create:
            home = self._create(self.root, self.lost_found)
        return home

    def _attach(self, parent: TreeNode, label: Hashable, path: Path) -> TreeNode:
        node = parent.children.get(label)
        if node is None:
            node = self._create(parent, label)
        node.add_path(path)
        self.path2node[path] = node
        return node

    def _move(self, src: TreeNode, dest: TreeNode, path: Path) -> None:
        """Re-home the children of ``src`` that carry ``path + label`` under ``dest``."""
        for child in list(src.children.values()):
            child_path = path + (child.label,)
            if child_path in child.paths:
                child.discard_path(child_path)
                node = self._attach(dest, child.label, child_path)
                self._move(child, node, child_path)
                self._prune(child)

    def update(self, kind: str, path: Path) -> None:
        if kind == ADD:
            father = self.path2node.get(path[:-1]) if len(path) > 1 else self.root
            if father is None:
                father = self._home()
            node = self._attach(father, path[-1], path)
            home = self._home(create=False)
            if home is not None:
                self._move(home, node, path)
                self._prune(home)
            return
        node = self.path2node.pop(path, None)
        if node is None:
            log.warning("root: removal of unknown path %r ignored", path)
            return
        home = self._home()
        self._move(node, home, path)
        node.discard_path(path)
        self._prune(node)
        self._prune(home)


class _MappedConnect(_IncrementalConnect):
    """Incremental maintenance for policies whose placement of a stored path
    depends only on which of its prefixes are stored.

    A change at path ``p`` can only move ``p`` and stored paths extending
    it, so those are re-placed; a prefix trie finds them.
    """

    def __init__(self, inner: Layer, lost_found: Hashable = None):
        self._ls: set[Path] = set()
        self._trie: dict[Path, set[Hashable]] = {(): set()}
        self._placed: dict[Path, Path] = {}
        super().__init__(inner, lost_found)

    def _target(self, x: Path) -> Path | None:
        raise NotImplementedError

    def _extensions(self, path: Path) -> list[Path]:
        out = []
        stack = [path]
        while stack:
            prefix = stack.pop()
            for label in self._trie.get(prefix, ()):
                child = prefix + (label,)
                if child in self._ls:
                    out.append(child)
                stack.append(child)
        return out

    def update(self, kind: str, path: Path) -> None:
        if kind == ADD:
            if path in self._ls:
                log.warning("%s: duplicate add of %r ignored", self.policy, path)
                return
            self._ls.add(path)
            for k in range(len(path)):
                self._trie.setdefault(path[:k], set()).add(path[k])
            self._trie.setdefault(path, set())
            self._replace([path] + self._extensions(path))
            return
        if path not in self._ls:
            log.warning("%s: removal of unknown path %r ignored", self.policy, path)
            return
        self._ls.discard(path)
        self._replace([path] + self._extensions(path))
        node = path
        while node and node not in self._ls and not self._trie.get(node):
            self._trie.pop(node, None)
            self._trie[node[:-1]].discard(node[-1])
            node = node[:-1]

    def _replace(self, paths: list[Path]) -> None:
        changes = []
        for x in paths:
            new = self._target(x) if x in self._ls else None
            old = self._placed.get(x)
            if new != old:
                changes.append((x, old, new))
        additions = sorted(
            (c for c in changes if c[2] is not None), key=lambda c: (path_key(c[2]), path_key(c[0]))
        )
        for x, _, new in additions:
            node = self.root
            for label in new:
                child = node.children.get(label)
                node = child if child is not None else self._create(node, label)
            node.add_path(x)
            self._placed[x] = new
        emptied = []
        for x, old, new in changes:
            if old is None:
                continue
            node = node_at(self.root, old)
            node.discard_path(x)
            emptied.append((len(old), node))
            if new is None:
                del self._placed[x]
        for _, node in sorted(emptied, key=lambda e: e[0], reverse=True):
            self._prune(node)


class SkipConnect(_MappedConnect):
    policy = SKIP

    def _target(self, x):
        ls = self._ls
        for k in range(1, len(x)):
            if x[:k] not in ls:
                return None
        return x


class CompactConnect(_MappedConnect):
    policy = COMPACT

    def _target(self, x):
        gaps = _gaps(x, self._ls)
        if not gaps:
            return x
        return x[: gaps[0] - 1] + x[gaps[-1]:]


INCREMENTAL = {SKIP: SkipConnect, REAPPEAR: ReappearConnect, ROOT: RootConnect, COMPACT: CompactConnect}


def connect(policy: str, inner: Layer, incremental: bool = True, lost_found: Hashable = None) -> _ConnectBase:
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; valid: {', '.join(POLICIES)}")
    if lost_found is not None and policy != ROOT:
        raise ValueError("lost_found only applies to the root policy")
    if not incremental:
        return ConnectLayer(inner, policy, lost_found)
    if policy == ROOT:
        return RootConnect(inner, lost_found)
    return INCREMENTAL[policy](inner)
