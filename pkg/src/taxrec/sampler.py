"""Training tuple sampling: random BPR tuples and sibling-based groups.

A random tuple picks a positive triple ``(u, t, i)`` uniformly over all
purchases and a negative leaf ``j`` uniformly among leaves outside basket
``B^u_t``.  A sibling group takes a purchase and, for every level of its
ancestor path below the root, pits the ancestor ``a`` against a uniformly
chosen sibling of ``a``.  One epoch is ``triple_count`` draws; a draw is a
sibling group with probability ``sibling_mix`` and a random tuple otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .data.transactions import TransactionLog
from .errors import DomainError, NoSiblingError

RANDOM = 0
SIBLING = 1
MODE_NAMES = {RANDOM: "random", SIBLING: "sibling"}


@dataclass(frozen=True)
class TrainTuple:
    user: int
    t: int
    pos: int
    neg: int
    mode: str = "random"
    level: int = 0


@dataclass
class TupleBatch:
    """Column-oriented tuples in stream order."""

    user: np.ndarray
    t: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    level: np.ndarray
    mode: np.ndarray
    draws: int

    def __len__(self):
        return len(self.user)

    def __getitem__(self, k) -> TrainTuple:
        return TrainTuple(int(self.user[k]), int(self.t[k]), int(self.pos[k]), int(self.neg[k]),
                          MODE_NAMES[int(self.mode[k])], int(self.level[k]))

    def __iter__(self) -> Iterator[TrainTuple]:
        for k in range(len(self)):
            yield self[k]

    @classmethod
    def from_tuples(cls, tuples) -> "TupleBatch":
        tuples = list(tuples)
        col = lambda f: np.array([f(x) for x in tuples], dtype=np.int64)
        return cls(col(lambda x: x.user), col(lambda x: x.t), col(lambda x: x.pos),
                   col(lambda x: x.neg), col(lambda x: x.level),
                   col(lambda x: SIBLING if x.mode == "sibling" else RANDOM), len(tuples))


def _negative_for(log: TransactionLog, basket: int, rng: np.random.Generator) -> int:
    leaves = log.taxonomy.leaves
    size = log.basket_ptr[basket + 1] - log.basket_ptr[basket]
    if size >= len(leaves):
        raise DomainError("basket contains every leaf; no negative item exists")
    while True:
        j = int(leaves[rng.integers(len(leaves))])
        if not log.in_basket(np.array([basket]), np.array([j]))[0]:
            return j


def sample_random_tuple(log: TransactionLog, rng: np.random.Generator) -> TrainTuple:
    if log.triple_count == 0:
        raise DomainError("cannot sample from an empty log")
    users, ts, items, baskets = log.triples
    k = int(rng.integers(log.triple_count))
    j = _negative_for(log, int(baskets[k]), rng)
    return TrainTuple(int(users[k]), int(ts[k]), int(items[k]), j, "random", 0)


def sample_sibling_tuples(log: TransactionLog, purchased_leaf: int, user: int, t: int,
                          rng: np.random.Generator, levels: int | None = None) -> list[TrainTuple]:
    """One tuple per used level of the purchase's path whose node has a sibling."""
    tax = log.taxonomy
    if purchased_leaf not in set(log.basket(user, t).tolist()):
        raise DomainError(f"item {purchased_leaf} is not in basket {t} of user {user}")
    levels = tax.depth + 1 if levels is None else levels
    out = []
    for a in tax.ancestor_path(purchased_leaf):
        if a == tax.root_id or tax.level[a] >= levels:
            break
        try:
            s = tax.sample_sibling(a, rng)
        except NoSiblingError:
            continue
        out.append(TrainTuple(user, t, a, s, "sibling", int(tax.level[a])))
    return out


class Sampler:
    """Vectorised tuple source for one training thread.

    Given the same seed the produced batches are identical, call for call.
    """

    def __init__(self, log: TransactionLog, levels: int, sibling_mix: float,
                 rng: np.random.Generator | int):
        if log.triple_count == 0:
            raise DomainError("cannot sample from an empty log")
        if not 0.0 <= sibling_mix <= 1.0:
            raise DomainError("sibling_mix must lie in [0, 1]")
        tax = log.taxonomy
        if not 1 <= levels <= tax.depth + 1:
            raise DomainError(f"levels must lie in [1, {tax.depth + 1}]")
        self.log = log
        self.levels = levels
        self.sibling_mix = float(sibling_mix)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self._leaves = tax.leaves
        sizes = np.diff(log.basket_ptr)
        if np.any(sizes >= len(self._leaves)):
            raise DomainError("a basket contains every leaf; no negative item exists")
        self._sibling_levels = min(levels, tax.depth)

    def draw(self, draws: int) -> TupleBatch:
        rng = self.rng
        log = self.log
        tax = log.taxonomy
        users, ts, items, baskets = log.triples
        is_sib = rng.random(draws) < self.sibling_mix
        idx = rng.integers(0, log.triple_count, draws)
        order = np.arange(draws, dtype=np.int64)

        ridx = idx[~is_sib]
        neg = self._leaves[rng.integers(0, len(self._leaves), len(ridx))]
        bad = log.in_basket(baskets[ridx], neg)
        while bad.any():
            neg[bad] = self._leaves[rng.integers(0, len(self._leaves), int(bad.sum()))]
            bad[bad] = log.in_basket(baskets[ridx[bad]], neg[bad])
        parts = [(order[~is_sib] * (tax.depth + 1), users[ridx], ts[ridx], items[ridx], neg,
                  np.zeros(len(ridx), np.int64), np.full(len(ridx), RANDOM, np.int64))]

        sidx = idx[is_sib]
        sorder = order[is_sib]
        leaf = items[sidx]
        for m in range(self._sibling_levels):
            a = tax.paths[leaf, m]
            par = tax.parent[a]
            start = tax.child_ptr[par]
            count = tax.child_ptr[par + 1] - start
            ok = count >= 2
            r = rng.integers(0, np.maximum(count - 1, 1))
            r = r + (r >= tax.child_pos[a])
            sib = tax.child_idx[np.minimum(start + r, len(tax.child_idx) - 1)]
            parts.append((sorder[ok] * (tax.depth + 1) + m, users[sidx][ok], ts[sidx][ok], a[ok],
                          sib[ok], np.full(int(ok.sum()), m, np.int64),
                          np.full(int(ok.sum()), SIBLING, np.int64)))

        cols = [np.concatenate(c) for c in zip(*parts)]
        perm = np.argsort(cols[0], kind="stable")
        return TupleBatch(*(c[perm] for c in cols[1:]), draws=draws)

    def epoch(self) -> TupleBatch:
        return self.draw(self.log.triple_count)

    def stream(self, chunk: int = 4096) -> Iterator[TrainTuple]:
        while True:
            yield from self.draw(chunk)


def next_batch(log: TransactionLog, config, rng: np.random.Generator,
               draws: int | None = None) -> TupleBatch:
    """Draw ``draws`` (default: one epoch) tuples mixed per ``config.sibling_mix``."""
    sampler = Sampler(log, config.resolved_levels(log.taxonomy), config.sibling_mix, rng)
    return sampler.draw(log.triple_count if draws is None else draws)


def check_tuple(log: TransactionLog, tup: TrainTuple) -> None:
    """Raise AssertionError unless ``tup`` satisfies its mode's invariant."""
    tax = log.taxonomy
    basket = set(log.basket(tup.user, tup.t).tolist())
    if tup.mode == "random":
        assert tup.pos in basket, "positive not in basket"
        assert tup.neg not in basket, "negative inside basket"
        assert tax.level[tup.pos] == 0 and tax.level[tup.neg] == 0, "random tuple on non-leaf"
        assert tup.level == 0
    elif tup.mode == "sibling":
        assert tup.pos != tup.neg
        assert tax.parent[tup.pos] == tax.parent[tup.neg], "not siblings"
        assert tax.level[tup.pos] == tup.level
        assert any(tax.paths[i, tup.level] == tup.pos for i in basket), \
            "positive is not an ancestor-or-self of a purchase"
    else:
        raise AssertionError(f"unknown mode {tup.mode}")
