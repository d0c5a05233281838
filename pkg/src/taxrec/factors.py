"""Latent factors, additive effective factors and the temporal affinity score.

Every taxonomy node owns two offset vectors: one for the item role and one
for the next-item role.  The effective factor of a node is the sum of the
offsets on its path to the root, restricted to the levels the model uses.
A user's score for a candidate node at transaction ``t`` is::

    <v_u, e(j)> + sum_n  a_n / |B_{t-n}|  sum_{l in B_{t-n}} <x(l), e(j)>

with ``e`` the effective item factor, ``x`` the effective next-item factor
and ``a_n = alpha * exp(-n / N)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Sequence

import numpy as np

from .errors import DomainError
from .taxonomy import Taxonomy

Which = Literal["item", "next"]
INIT_STD = 0.01


@dataclass
class FactorStore:
    """Dense factor matrices: users, item offsets, next-item offsets."""

    user: np.ndarray
    item: np.ndarray
    next: np.ndarray

    def __post_init__(self):
        self.user = np.ascontiguousarray(self.user, dtype=np.float64)
        self.item = np.ascontiguousarray(self.item, dtype=np.float64)
        self.next = np.ascontiguousarray(self.next, dtype=np.float64)
        if self.user.ndim != 2 or self.item.ndim != 2 or self.next.ndim != 2:
            raise DomainError("factor matrices must be 2-D")
        k = self.item.shape[1]
        if self.user.shape[1] != k or self.next.shape[1] != k:
            raise DomainError("factor matrices disagree on K")
        if self.item.shape[0] != self.next.shape[0]:
            raise DomainError("item and next-item offsets need one row per node")

    @classmethod
    def initialize(cls, K: int, user_count: int, node_count: int,
                   rng: np.random.Generator, std: float = INIT_STD) -> "FactorStore":
        if K < 1:
            raise DomainError("K must be positive")
        return cls(rng.normal(0.0, std, (user_count, K)),
                   rng.normal(0.0, std, (node_count, K)),
                   rng.normal(0.0, std, (node_count, K)))

    @classmethod
    def zeros(cls, K: int, user_count: int, node_count: int) -> "FactorStore":
        return cls(np.zeros((user_count, K)), np.zeros((node_count, K)), np.zeros((node_count, K)))

    @property
    def K(self) -> int:
        return self.item.shape[1]

    @property
    def user_count(self) -> int:
        return self.user.shape[0]

    @property
    def node_count(self) -> int:
        return self.item.shape[0]

    def offsets(self, which: Which) -> np.ndarray:
        if which == "item":
            return self.item
        if which == "next":
            return self.next
        raise DomainError(f"unknown factor kind {which!r}")

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.user).all() and np.isfinite(self.item).all()
                    and np.isfinite(self.next).all())

    def copy(self) -> "FactorStore":
        return FactorStore(self.user.copy(), self.item.copy(), self.next.copy())

    def equals(self, other: "FactorStore") -> bool:
        return (np.array_equal(self.user, other.user) and np.array_equal(self.item, other.item)
                and np.array_equal(self.next, other.next))


@dataclass(frozen=True)
class DecayWeights:
    """Per-lag weights ``alpha * exp(-n / N)`` for ``n = 1..N``."""

    N: int
    alpha: float = 1.0
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.N < 0:
            raise DomainError("Markov order N must be >= 0")
        if not self.alpha > 0:
            raise DomainError("decay base alpha must be positive")
        n = np.arange(1, self.N + 1, dtype=np.float64)
        w = self.alpha * np.exp(-n / self.N) if self.N else np.empty(0)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def _used(taxonomy: Taxonomy, levels: int) -> int:
    if not 1 <= levels <= taxonomy.depth + 1:
        raise DomainError(f"levels must lie in [1, {taxonomy.depth + 1}], got {levels}")
    return int(levels)


def effective_factor(store: FactorStore, taxonomy: Taxonomy, node: int, which: Which = "item",
                     levels: int | None = None) -> np.ndarray:
    """Sum of the node's path offsets over the levels below ``levels``.

    For a leaf that is its own offset plus those of ``levels - 1`` ancestors.
    Internal nodes use the same rule, so a category at a level the model does
    not use has a zero effective factor.
    """
    levels = _used(taxonomy, taxonomy.depth + 1 if levels is None else levels)
    w = store.offsets(which)
    out = np.zeros(store.K)
    for a in reversed(taxonomy.ancestor_path(node)):
        if taxonomy.level[a] < levels:
            out += w[a]
    return out


def effective_matrix(offsets: np.ndarray, taxonomy: Taxonomy, levels: int) -> np.ndarray:
    """Effective factors of every node, accumulated top-down level by level."""
    levels = _used(taxonomy, levels)
    eff = np.zeros_like(offsets)
    for lv in range(taxonomy.depth, -1, -1):
        nodes = taxonomy.level_index[lv]
        par = taxonomy.parent[nodes]
        has_par = par >= 0
        if lv < levels:
            eff[nodes] = offsets[nodes]
            eff[nodes[has_par]] = eff[par[has_par]] + offsets[nodes[has_par]]
        else:
            eff[nodes[has_par]] = eff[par[has_par]]
    return eff


def _check_history(history, decay: DecayWeights):
    if len(history) > decay.N:
        raise DomainError(f"history has {len(history)} baskets but N={decay.N}")
    for b in history:
        if len(b) == 0:
            raise DomainError("empty basket in history")


def affinity(store: FactorStore, taxonomy: Taxonomy, user: int, candidate: int,
             history: Sequence[Sequence[int]], decay: DecayWeights,
             levels: int | None = None) -> float:
    """Score of ``candidate`` for ``user`` given previous baskets (most recent first)."""
    levels = taxonomy.depth + 1 if levels is None else levels
    _check_history(history, decay)
    target = effective_factor(store, taxonomy, candidate, "item", levels)
    score = float(store.user[user] @ target)
    for n, basket in enumerate(history, 1):
        coef = decay.weights[n - 1] / len(basket)
        for item in basket:
            score += coef * float(effective_factor(store, taxonomy, item, "next", levels) @ target)
    return score


@dataclass
class TFModel:
    """A factor store bound to its taxonomy and model structure.

    Effective factor matrices are computed once and cached; treat the store as
    read-only while a model wraps it.
    """

    store: FactorStore
    taxonomy: Taxonomy
    levels: int
    decay: DecayWeights

    def __post_init__(self):
        _used(self.taxonomy, self.levels)
        if self.store.node_count != self.taxonomy.node_count:
            raise DomainError("store rows do not match taxonomy node count")

    @classmethod
    def from_config(cls, store: FactorStore, taxonomy: Taxonomy, config) -> "TFModel":
        return cls(store, taxonomy, config.resolved_levels(taxonomy),
                   DecayWeights(config.N, config.alpha))

    @cached_property
    def item_effective(self) -> np.ndarray:
        return effective_matrix(self.store.item, self.taxonomy, self.levels)

    @cached_property
    def next_effective(self) -> np.ndarray:
        return effective_matrix(self.store.next, self.taxonomy, self.levels)

    def short_term(self, history: Sequence[Sequence[int]]) -> np.ndarray:
        _check_history(history, self.decay)
        out = np.zeros(self.store.K)
        nxt = self.next_effective
        for n, basket in enumerate(history, 1):
            idx = np.asarray(basket, dtype=np.int64)
            out += (self.decay.weights[n - 1] / len(idx)) * nxt[idx].sum(axis=0)
        return out

    def query(self, user: int, history: Sequence[Sequence[int]] = ()) -> np.ndarray:
        """Vector q such that the score of node j is ``<q, e(j)>``."""
        return self.store.user[user] + self.short_term(history)

    def scores(self, user: int, history: Sequence[Sequence[int]], nodes) -> np.ndarray:
        return self.item_effective[np.asarray(nodes, dtype=np.int64)] @ self.query(user, history)

    def affinity(self, user: int, candidate: int, history: Sequence[Sequence[int]] = ()) -> float:
        return affinity(self.store, self.taxonomy, user, candidate, history, self.decay, self.levels)


EXPORT_KINDS = ("user", "item_offset", "next_offset", "item_effective")


def export_factors(model: TFModel, path) -> None:
    """Write every raw vector as CSV ``kind,node_or_user_id,level,f_0..f_{K-1}``.

    Node ids are the taxonomy's external ids; user rows carry an empty level.
    """
    tax = model.taxonomy
    K = model.store.K
    ext = tax.external_ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["kind", "node_or_user_id", "level"] + [f"f_{k}" for k in range(K)])
        for u in range(model.store.user_count):
            out.writerow(["user", u, ""] + [repr(float(x)) for x in model.store.user[u]])
        for kind, mat in (("item_offset", model.store.item), ("next_offset", model.store.next),
                          ("item_effective", model.item_effective)):
            for node in range(tax.node_count):
                out.writerow([kind, int(ext[node]), int(tax.level[node])]
                             + [repr(float(x)) for x in mat[node]])


def read_factor_export(path) -> dict[str, dict[int, tuple[int | None, np.ndarray]]]:
    """Parse an export back into ``{kind: {id: (level, vector)}}``."""
    out: dict[str, dict] = {kind: {} for kind in EXPORT_KINDS}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            level = int(row[2]) if row[2] != "" else None
            out[row[0]][int(row[1])] = (level, np.array([float(x) for x in row[3:]]))
    return out
