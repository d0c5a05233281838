"""Immutable item taxonomy: levels, ancestor paths, children and siblings.

Levels are counted bottom-up: purchasable items sit at level 0 and the single
synthetic root at level ``depth``.  Input forests are normalised on
construction so that every leaf ends up at level 0 (ragged branches are padded
with pass-through nodes) and every declared top-level node hangs off one
synthetic root.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, NoSiblingError, TaxonomyFormatError

ROOT_LABEL = "ROOT"
PAD_LABEL = "PAD"
UNCATEGORIZED_LABEL = "UNCATEGORIZED"


@dataclass(frozen=True)
class NodeRecord:
    node_id: int
    parent_id: int | None
    level: int
    label: str


class Taxonomy:
    """A rooted tree whose leaves all sit at level 0.

    Node ids are dense integers in ``[0, node_count)``.  ``external_ids`` maps
    them back to the ids used in input files (the synthetic root maps to -1).
    Instances are read-only after construction and safe to share between
    threads.
    """

    def __init__(self, parent: Sequence[int], labels: Sequence[str] | None = None,
                 external_ids: Sequence[int] | None = None):
        parent = np.asarray(parent, dtype=np.int64)
        n = len(parent)
        if n == 0:
            raise DomainError("taxonomy needs at least a root node")
        roots = np.flatnonzero(parent < 0)
        if len(roots) != 1:
            raise DomainError(f"expected exactly one root, found {len(roots)}")
        if np.any(parent >= n):
            raise DomainError("parent id out of range")
        self.parent = parent
        self.root_id = int(roots[0])
        self.labels = tuple(labels) if labels is not None else tuple("" for _ in range(n))
        if external_ids is None:
            external_ids = np.arange(n, dtype=np.int64)
        self.external_ids = np.asarray(external_ids, dtype=np.int64)
        if len(self.labels) != n or len(self.external_ids) != n:
            raise DomainError("labels/external_ids length does not match parent array")

        # depth from the root; a node that never reaches the root sits on a cycle
        depth = np.full(n, -1, dtype=np.int64)
        depth[self.root_id] = 0
        for start in range(n):
            chain = []
            node = start
            while depth[node] < 0:
                chain.append(node)
                node = parent[node]
                if node < 0 or len(chain) > n:
                    raise DomainError(f"cycle or dangling parent link at node {start}")
            d = depth[node]
            for c in reversed(chain):
                d += 1
                depth[c] = d

        child_count = np.bincount(parent[parent >= 0], minlength=n)
        is_leaf = child_count == 0
        leaf_depths = np.unique(depth[is_leaf])
        if len(leaf_depths) != 1:
            raise DomainError("leaves sit at different depths; pad the tree first")
        self.depth = int(leaf_depths[0])
        self.level = self.depth - depth
        self.level.setflags(write=False)
        self.parent.setflags(write=False)

        order = np.lexsort((np.arange(n), parent))
        order = order[parent[order] >= 0]
        self.child_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(child_count, out=self.child_ptr[1:])
        self.child_idx = order.astype(np.int64)
        self.child_pos = np.zeros(n, dtype=np.int64)
        self.child_pos[self.child_idx] = np.arange(len(self.child_idx)) - self.child_ptr[parent[self.child_idx]]

        self.level_index = tuple(np.flatnonzero(self.level == lv) for lv in range(self.depth + 1))

        paths = np.full((n, self.depth + 1), -1, dtype=np.int64)
        paths[:, 0] = np.arange(n)
        for m in range(1, self.depth + 1):
            prev = paths[:, m - 1]
            ok = prev >= 0
            paths[ok, m] = parent[prev[ok]]
        self.paths = paths
        self.paths.setflags(write=False)
        self._ext_to_int = {int(e): i for i, e in enumerate(self.external_ids)}

    # ------------------------------------------------------------------ build
    @classmethod
    def from_records(cls, records: Iterable[tuple[int, int, str]],
                     extra_items: Iterable[int] = ()) -> "Taxonomy":
        """Build from ``(node_id, parent_id, label)`` records of a forest.

        Every record with ``parent_id == -1`` becomes a child of one synthetic
        root.  Leaves shallower than the deepest leaf get pass-through parents
        inserted above them.  ``extra_items`` are item ids missing from the
        records; they are attached under an UNCATEGORIZED top-level node.
        """
        records = list(records)
        ext_ids = [int(r[0]) for r in records]
        if len(set(ext_ids)) != len(ext_ids):
            raise DomainError("duplicate node ids in taxonomy records")
        if any(e < 0 for e in ext_ids):
            raise DomainError("node ids must be non-negative")
        known = set(ext_ids)
        for r in records:
            if int(r[1]) != -1 and int(r[1]) not in known:
                raise DomainError(f"node {r[0]} references unknown parent {r[1]}")
        extras = sorted({int(e) for e in extra_items} - known)

        records.sort(key=lambda r: int(r[0]))
        index = {int(r[0]): k for k, r in enumerate(records)}
        n0 = len(records)
        root = n0
        parent = [index[int(r[1])] if int(r[1]) != -1 else root for r in records] + [-1]
        labels = [str(r[2]) for r in records] + [ROOT_LABEL]
        externals = [int(r[0]) for r in records] + [-1]
        next_ext = max(ext_ids + extras, default=-1) + 1

        def add(par, label, ext=None):
            nonlocal next_ext
            if ext is None:
                ext = next_ext
                next_ext += 1
            parent.append(par)
            labels.append(label)
            externals.append(ext)
            return len(parent) - 1

        depth = _depths(parent, root)
        has_child = np.zeros(len(parent), dtype=bool)
        for p in parent:
            if p >= 0:
                has_child[p] = True
        leaves = [k for k in range(n0) if not has_child[k]]
        D = max((depth[k] for k in leaves), default=0)

        for leaf in leaves:
            missing = D - depth[leaf]
            par = parent[leaf]
            for _ in range(missing):
                par = add(par, PAD_LABEL)
            parent[leaf] = par

        if extras:
            if D >= 2:
                par = add(root, UNCATEGORIZED_LABEL)
                for _ in range(D - 2):
                    par = add(par, PAD_LABEL)
            else:
                par = root
            for e in extras:
                add(par, "", ext=e)
        return cls(parent, labels, externals)

    # ------------------------------------------------------------- accessors
    @property
    def node_count(self) -> int:
        return len(self.parent)

    @property
    def leaves(self) -> np.ndarray:
        return self.level_index[0]

    @property
    def full_levels(self) -> int:
        """Number of nodes on a leaf's ancestor path (``depth + 1``)."""
        return self.depth + 1

    def _check(self, node: int) -> int:
        node = int(node)
        if not 0 <= node < self.node_count:
            raise DomainError(f"invalid node id {node}")
        return node

    def node(self, node: int) -> NodeRecord:
        node = self._check(node)
        p = int(self.parent[node])
        return NodeRecord(node, None if p < 0 else p, int(self.level[node]), self.labels[node])

    @property
    def nodes(self) -> list[NodeRecord]:
        return [self.node(k) for k in range(self.node_count)]

    def is_leaf(self, node: int) -> bool:
        return self.level[self._check(node)] == 0

    def children(self, node: int) -> np.ndarray:
        node = self._check(node)
        return self.child_idx[self.child_ptr[node]:self.child_ptr[node + 1]]

    def internal_id(self, external_id: int) -> int:
        try:
            return self._ext_to_int[int(external_id)]
        except KeyError:
            raise DomainError(f"unknown node id {external_id}") from None

    def has_external(self, external_id: int) -> bool:
        return int(external_id) in self._ext_to_int

    def ancestor_path(self, node: int) -> list[int]:
        """``[node, parent(node), ..., root]``."""
        node = self._check(node)
        row = self.paths[node]
        return [int(a) for a in row[row >= 0]]

    def ancestor_at(self, node: int, level: int) -> int:
        node = self._check(node)
        m = level - int(self.level[node])
        if not 0 <= m <= self.depth - int(self.level[node]):
            raise DomainError(f"node {node} has no ancestor at level {level}")
        return int(self.paths[node, m])

    def siblings(self, node: int) -> np.ndarray:
        node = self._check(node)
        if node == self.root_id:
            return np.empty(0, dtype=np.int64)
        kids = self.children(int(self.parent[node]))
        return kids[kids != node]

    def sample_sibling(self, node: int, rng: np.random.Generator) -> int:
        """Uniform draw among the other children of ``node``'s parent."""
        node = self._check(node)
        if node == self.root_id:
            raise NoSiblingError("the root has no siblings")
        p = int(self.parent[node])
        count = int(self.child_ptr[p + 1] - self.child_ptr[p])
        if count < 2:
            raise NoSiblingError(f"node {node} is an only child")
        r = int(rng.integers(count - 1))
        if r >= self.child_pos[node]:
            r += 1
        return int(self.child_idx[self.child_ptr[p] + r])

    def restrict_levels(self, levels: int) -> "TaxonomyView":
        return TaxonomyView(self, levels)

    def __repr__(self):
        sizes = "/".join(str(len(ix)) for ix in reversed(self.level_index))
        return f"Taxonomy(depth={self.depth}, nodes={self.node_count}, level sizes top-down={sizes})"


class TaxonomyView:
    """A taxonomy seen through its lowest ``levels`` levels.

    ``ancestor_path`` keeps only path nodes whose level is below ``levels``;
    for a leaf this is the leaf plus ``levels - 1`` ancestors.  ``levels=1``
    is the flat latent factor model, ``levels=depth+1`` the full tree.
    """

    def __init__(self, taxonomy: Taxonomy, levels: int):
        if not 1 <= levels <= taxonomy.depth + 1:
            raise DomainError(f"levels must lie in [1, {taxonomy.depth + 1}], got {levels}")
        self.taxonomy = taxonomy
        self.levels = int(levels)

    def ancestor_path(self, node: int) -> list[int]:
        lv = self.taxonomy.level
        return [a for a in self.taxonomy.ancestor_path(node) if lv[a] < self.levels]

    def __getattr__(self, name):
        return getattr(self.taxonomy, name)


def restrict_levels(taxonomy: Taxonomy, levels: int) -> TaxonomyView:
    return TaxonomyView(taxonomy, levels)


def _depths(parent: list[int], root: int) -> list[int]:
    n = len(parent)
    depth = [-1] * n
    depth[root] = 0
    for start in range(n):
        chain = []
        node = start
        while depth[node] < 0:
            chain.append(node)
            node = parent[node]
            if node < 0 or len(chain) > n:
                raise DomainError(f"cycle in taxonomy involving node index {start}")
        d = depth[node]
        for c in reversed(chain):
            d += 1
            depth[c] = d
    return depth


# ------------------------------------------------------------------------ io
def read_taxonomy_records(path) -> list[tuple[int, int, str]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t", 2)
            if len(parts) < 2:
                raise TaxonomyFormatError("expected node_id<TAB>parent_id<TAB>label", lineno)
            try:
                node_id, parent_id = int(parts[0]), int(parts[1])
            except ValueError:
                raise TaxonomyFormatError("ids must be integers", lineno) from None
            if node_id < 0 or parent_id < -1:
                raise TaxonomyFormatError("ids must be non-negative (parent -1 for roots)", lineno)
            records.append((node_id, parent_id, parts[2] if len(parts) > 2 else ""))
    return records


def load_taxonomy(path, extra_items: Iterable[int] = ()) -> Taxonomy:
    records = read_taxonomy_records(path)
    try:
        return Taxonomy.from_records(records, extra_items)
    except DomainError as exc:
        raise TaxonomyFormatError(f"{path}: {exc}") from exc


def write_taxonomy(taxonomy: Taxonomy, path) -> None:
    """Write every node except the synthetic root; its children get parent -1."""
    ext = taxonomy.external_ids
    lines = ["# node_id\tparent_id\tlabel\n"]
    for k in range(taxonomy.node_count):
        if k == taxonomy.root_id:
            continue
        p = int(taxonomy.parent[k])
        pext = -1 if p == taxonomy.root_id else int(ext[p])
        lines.append(f"{int(ext[k])}\t{pext}\t{taxonomy.labels[k]}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")
