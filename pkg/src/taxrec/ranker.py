"""Exhaustive and cascaded (taxonomy-pruned) ranking of nodes for a user.

Scores are ``<q, e(j)>`` with ``q`` the user's query vector (long-term factor
plus short-term history term) and ``e`` the effective item factor.  Every
ordering is by descending score, ties broken by ascending node id.

Cascaded ranking starts from the top level (the root's children), keeps the
best ``n = ceil(k * size(level))`` nodes of the scored frontier, expands
their children and repeats down to the target level, where the same cut
selects the survivors.  Fractions are given top-down, one per level from the
top level to the leaves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .errors import DomainError
from .factors import TFModel


@njit(cache=True, nogil=True)
def score_rows(eff, rows, q):
    """``eff[rows] @ q`` with a fixed left-to-right summation per row."""
    out = np.empty(rows.shape[0])
    K = q.shape[0]
    for r in range(rows.shape[0]):
        acc = 0.0
        node = rows[r]
        for k in range(K):
            acc += eff[node, k] * q[k]
        out[r] = acc
    return out


def sort_by_score(nodes: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Permutation ordering ``nodes`` by descending score, then ascending id."""
    return np.lexsort((nodes, -scores))


@dataclass(frozen=True)
class CascadeConfig:
    """Pruning fractions, top level first, leaf level last."""

    fractions: tuple[float, ...]

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if not fr:
            raise DomainError("cascade needs at least one fraction")
        for f in fr:
            if not 0.0 < f <= 1.0:
                raise DomainError(f"cascade fraction {f} outside (0, 1]")
        object.__setattr__(self, "fractions", fr)

    @classmethod
    def uniform(cls, fraction: float, depth: int) -> "CascadeConfig":
        return cls((fraction,) * depth)

    @classmethod
    def leaf_only(cls, fraction: float, depth: int) -> "CascadeConfig":
        """Upper levels unpruned, leaf level cut to ``fraction``."""
        return cls((1.0,) * (depth - 1) + (fraction,))

    def fraction_at(self, level: int, depth: int) -> float:
        if len(self.fractions) != depth:
            raise DomainError(f"cascade has {len(self.fractions)} fractions but the taxonomy "
                              f"has {depth} levels below the root")
        return self.fractions[depth - 1 - level]

    def keep_count(self, level: int, depth: int, level_size: int, frontier: int) -> int:
        n = math.ceil(self.fraction_at(level, depth) * level_size)
        return max(1, min(n, frontier)) if frontier else 0


@dataclass
class RankedResult:
    level: int
    nodes: np.ndarray
    scores: np.ndarray
    scored: int
    cascaded: bool = False
    _paths: np.ndarray | None = field(default=None, repr=False)
    _depth: int = 0

    def __len__(self):
        return len(self.nodes)

    @property
    def entries(self) -> list[tuple[int, float]]:
        return [(int(n), float(s)) for n, s in zip(self.nodes, self.scores)]

    def cascade_path(self, node: int) -> tuple[int, ...]:
        """Ancestors (top level first) whose selection admitted ``node``."""
        if not self.cascaded:
            return ()
        chain = self._paths[node, 1:self._depth - self.level]
        return tuple(int(a) for a in chain[::-1])


def _check_level(model: TFModel, level: int) -> int:
    if not 0 <= level < model.taxonomy.depth:
        raise DomainError(f"level must lie in [0, {model.taxonomy.depth - 1}], got {level}")
    return int(level)


def _exclusion(model: TFModel, exclude) -> np.ndarray | None:
    if exclude is None:
        return None
    mask = np.zeros(model.taxonomy.node_count, dtype=bool)
    mask[np.asarray(list(exclude) if not isinstance(exclude, np.ndarray) else exclude,
                    dtype=np.int64)] = True
    return mask


def exhaustive_scores(model: TFModel, q: np.ndarray, level: int,
                      exclude: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    nodes = model.taxonomy.level_index[level]
    if exclude is not None:
        nodes = nodes[~exclude[nodes]]
    return nodes, score_rows(model.item_effective, nodes, q)


def rank_exhaustive(model: TFModel, user: int, history: Sequence[Sequence[int]] = (),
                    level: int = 0, exclude=None) -> RankedResult:
    """Score and sort every node at ``level`` (minus ``exclude``)."""
    level = _check_level(model, level)
    q = model.query(user, history)
    nodes, scores = exhaustive_scores(model, q, level, _exclusion(model, exclude))
    order = sort_by_score(nodes, scores)
    return RankedResult(level, nodes[order], scores[order], len(nodes))


@dataclass
class CascadeTrace:
    """Everything a cascade run scored, for building complete orderings."""

    survivors: np.ndarray
    survivor_scores: np.ndarray
    pruned: list[tuple[int, np.ndarray]]  # (level, nodes in score order) cut at each level
    scored: int


def cascade(model: TFModel, q: np.ndarray, config: CascadeConfig, target_level: int,
            exclude: np.ndarray | None = None) -> CascadeTrace:
    tax = model.taxonomy
    depth = tax.depth
    eff = model.item_effective
    frontier = tax.level_index[depth - 1]
    pruned = []
    scored = 0
    for lv in range(depth - 1, target_level - 1, -1):
        if lv == target_level and exclude is not None:
            frontier = frontier[~exclude[frontier]]
        s = score_rows(eff, frontier, q)
        scored += len(frontier)
        order = sort_by_score(frontier, s)
        n = config.keep_count(lv, depth, len(tax.level_index[lv]), len(frontier))
        keep, drop = order[:n], order[n:]
        pruned.append((lv, frontier[drop]))
        if lv == target_level:
            return CascadeTrace(frontier[keep], s[keep], pruned, scored)
        kept = np.sort(frontier[keep])
        frontier = np.concatenate([tax.child_idx[tax.child_ptr[a]:tax.child_ptr[a + 1]]
                                   for a in kept])
        frontier.sort()
    raise AssertionError("unreachable")


def rank_cascaded(model: TFModel, user: int, history: Sequence[Sequence[int]],
                  config: CascadeConfig, target_level: int = 0, exclude=None) -> RankedResult:
    """Top-down pruned ranking; returns the sorted survivors at ``target_level``."""
    target_level = _check_level(model, target_level)
    q = model.query(user, history)
    tr = cascade(model, q, config, target_level, _exclusion(model, exclude))
    return RankedResult(target_level, tr.survivors, tr.survivor_scores, tr.scored, True,
                        model.taxonomy.paths, model.taxonomy.depth)


def cascade_order(model: TFModel, trace: CascadeTrace, target_level: int,
                  exclude: np.ndarray | None = None) -> np.ndarray:
    """Complete ordering of the target level implied by a cascade run.

    Survivors come first in score order.  Every other node follows, grouped
    by its deepest scored ancestor: groups cut at lower levels come before
    groups cut higher up; within a level groups follow the ancestor's score
    order, and nodes inside a group ascend by id.
    """
    tax = model.taxonomy
    nodes = tax.level_index[target_level]
    if exclude is not None:
        nodes = nodes[~exclude[nodes]]
    tier = np.full(tax.node_count, -1, dtype=np.int64)
    rank = np.zeros(tax.node_count, dtype=np.int64)
    rank[trace.survivors] = np.arange(len(trace.survivors))
    tier[trace.survivors] = 0
    for lv, cut in trace.pruned:
        tier[cut] = 1 + lv - target_level
        rank[cut] = np.arange(len(cut))
    # deepest scored node on each path: first m with a tier assigned
    path = tax.paths[nodes]
    width = tax.depth - target_level
    anc_tier = np.where(path[:, :width] >= 0, tier[np.maximum(path[:, :width], 0)], -1)
    first = np.argmax(anc_tier >= 0, axis=1)
    anc = path[np.arange(len(nodes)), first]
    key_tier = tier[anc]
    key_rank = rank[anc]
    # survivors (tier 0) sort on their own rank; cut target nodes form tier 1
    order = np.lexsort((nodes, key_rank, key_tier))
    return nodes[order]


def recommend_topk(model: TFModel, user: int, history: Sequence[Sequence[int]], k: int,
                   mode: str | CascadeConfig = "exhaustive", level: int = 0,
                   exclude=None) -> RankedResult:
    """First ``k`` entries of the ranking at ``level`` (fewer if the cascade admits fewer)."""
    if k < 1:
        raise DomainError("k must be >= 1")
    if isinstance(mode, CascadeConfig):
        res = rank_cascaded(model, user, history, mode, level, exclude)
    elif mode == "exhaustive":
        res = rank_exhaustive(model, user, history, level, exclude)
    else:
        raise DomainError(f"unknown ranking mode {mode!r}")
    res.nodes = res.nodes[:k]
    res.scores = res.scores[:k]
    return res
