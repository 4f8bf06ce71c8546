"""Hierarchical interest taxonomy.

Category ids are slash-delimited paths ("Health/Pediatrics"); a node's level
equals its number of path segments and the synthetic root sits at level 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

ROOT_ID = ""


class TaxonomyError(ValueError):
    pass


class CycleDetected(TaxonomyError):
    pass


class DanglingParent(TaxonomyError):
    pass


class DuplicateId(TaxonomyError):
    pass


class UnknownNode(KeyError):
    pass


class EmptyAssignedSet(ValueError):
    pass


@dataclass(frozen=True)
class CategoryNode:
    id: str
    display_name: str
    parent_id: Optional[str]
    level: int


NodeRef = Union[CategoryNode, str]


def _node_id(ref: NodeRef) -> str:
    return ref.id if isinstance(ref, CategoryNode) else ref


class CategoryTree:
    """Validated, immutable taxonomy. Build it with :func:`build_tree` or :func:`load_tree`."""

    def __init__(self, nodes: Iterable[CategoryNode]):
        self._nodes = {n.id: n for n in nodes}
        self.root = CategoryNode(ROOT_ID, "root", None, 0)
        self._children: dict[str, list[str]] = {ROOT_ID: []}
        for node in self._nodes.values():
            self._children.setdefault(node.id, [])
        for node in sorted(self._nodes.values(), key=lambda n: n.id):
            self._children[node.parent_id or ROOT_ID].append(node.id)

    def __contains__(self, ref: object) -> bool:
        if isinstance(ref, CategoryNode):
            return ref.id in self._nodes
        return ref in self._nodes

    def __getitem__(self, ref: NodeRef) -> CategoryNode:
        key = _node_id(ref)
        if key == ROOT_ID:
            return self.root
        try:
            return self._nodes[key]
        except KeyError:
            raise UnknownNode(key) from None

    def __iter__(self) -> Iterator[CategoryNode]:
        return iter(sorted(self._nodes.values(), key=lambda n: n.id))

    def __len__(self) -> int:
        return len(self._nodes)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CategoryTree) and self._nodes == other._nodes

    @property
    def nodes(self) -> list[CategoryNode]:
        return list(self)

    @property
    def max_depth(self) -> int:
        return max((n.level for n in self._nodes.values()), default=0)

    def children(self, ref: NodeRef) -> list[CategoryNode]:
        key = self[ref].id
        return [self._nodes[c] for c in self._children[key]]

    def ancestors(self, ref: NodeRef) -> list[CategoryNode]:
        """Proper ancestors, nearest first; the root is not included."""
        out = []
        node = self[ref]
        while node.parent_id:
            node = self._nodes[node.parent_id]
            out.append(node)
        return out

    def subtree(self, ref: NodeRef) -> list[CategoryNode]:
        """The node itself followed by all its descendants (preorder)."""
        start = self[ref]
        out, stack = [], [start.id]
        while stack:
            key = stack.pop()
            out.append(self[key])
            stack.extend(reversed(self._children[key]))
        return out if start.id != ROOT_ID else out[1:]

    def at_level(self, level: int) -> list[CategoryNode]:
        return [n for n in self if n.level == level]

    def top_level(self, ref: NodeRef) -> CategoryNode:
        node = self[ref]
        while node.parent_id:
            node = self._nodes[node.parent_id]
        return node

    def to_text(self) -> str:
        return "".join(f"{n.id}\t{n.display_name}\n" for n in self)


def build_tree(rows: Iterable[tuple]) -> CategoryTree:
    """Validate ``(id, parent_id)`` or ``(id, display_name, parent_id)`` rows.

    ``parent_id`` of ``None`` or ``""`` attaches the node to the root.
    """
    parents: dict[str, Optional[str]] = {}
    names: dict[str, str] = {}
    for row in rows:
        if len(row) == 2:
            node_id, parent = row
            name = node_id.rsplit("/", 1)[-1]
        else:
            node_id, name, parent = row
        if not node_id:
            raise TaxonomyError("empty category id")
        if node_id in parents:
            raise DuplicateId(node_id)
        parents[node_id] = parent or None
        names[node_id] = name

    for node_id, parent in parents.items():
        if parent is not None and parent not in parents:
            raise DanglingParent(f"{node_id!r} refers to missing parent {parent!r}")

    levels: dict[str, int] = {}
    for start in parents:
        path = []
        on_path = set()
        key: Optional[str] = start
        while key is not None and key not in levels:
            if key in on_path:
                raise CycleDetected(" -> ".join(path + [key]))
            on_path.add(key)
            path.append(key)
            key = parents[key]
        base = 0 if key is None else levels[key]
        for depth, k in enumerate(reversed(path), start=1):
            levels[k] = base + depth

    nodes = []
    for node_id, parent in parents.items():
        level = levels[node_id]
        if node_id.count("/") + 1 != level:
            raise TaxonomyError(f"{node_id!r}: path has {node_id.count('/') + 1} segments but level is {level}")
        expected_parent = node_id.rsplit("/", 1)[0] if "/" in node_id else None
        if parent != expected_parent:
            raise TaxonomyError(f"{node_id!r}: parent {parent!r} is not the path prefix")
        nodes.append(CategoryNode(node_id, names[node_id], parent, level))
    return CategoryTree(nodes)


def load_tree(document: str) -> CategoryTree:
    """Parse the tree file format: ``id<TAB>display_name[<TAB>parent_id]`` per line.

    Without an explicit parent column the parent is the id's path prefix.
    Blank lines and ``#`` comments are skipped.
    """
    rows = []
    for lineno, raw in enumerate(document.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        node_id = cols[0].strip()
        name = cols[1].strip() if len(cols) > 1 and cols[1].strip() else node_id.rsplit("/", 1)[-1]
        if len(cols) > 2:
            parent = cols[2].strip() or None
        else:
            parent = node_id.rsplit("/", 1)[0] if "/" in node_id else None
        rows.append((node_id, name, parent))
    return build_tree(rows)


def read_tree(path: Union[str, Path]) -> CategoryTree:
    return load_tree(Path(path).read_text(encoding="utf-8"))


def default_tree() -> CategoryTree:
    """The packaged 3-level synthetic taxonomy."""
    text = resources.files("adscape.data").joinpath("taxonomy.tsv").read_text(encoding="utf-8")
    return load_tree(text)


def is_relevant(tree: CategoryTree, target: NodeRef, candidate: NodeRef) -> bool:
    """True iff ``candidate`` is ``target`` or lies in the subtree rooted at it."""
    t = tree[target]
    node = tree[candidate]
    while True:
        if node.id == t.id:
            return True
        if node.parent_id is None:
            return t.id == ROOT_ID
        node = tree[node.parent_id]


def relevance_fraction(tree: CategoryTree, target: NodeRef, assigned: Iterable[NodeRef]) -> float:
    assigned = {_node_id(a) for a in assigned}
    if not assigned:
        raise EmptyAssignedSet("relevance of an empty interest set is undefined")
    hits = sum(1 for a in assigned if is_relevant(tree, target, a))
    return hits / len(assigned)
