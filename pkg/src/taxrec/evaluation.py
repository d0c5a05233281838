"""Train/test splitting, AUC and meanRank, and per-user evaluation.

Each user's transaction sequence is cut at a random fraction ``f`` (normal
around ``mu``): the prefix trains, the next ``T`` transactions form the test
slice and the last ``T`` training transactions the validation slice.  A
held-out case is one transaction: its items are the positives and the
ranking universe is every leaf except the items the user bought in training.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data.transactions import TransactionLog
from .errors import DomainError
from .factors import TFModel
from .ranker import CascadeConfig, cascade, cascade_order, score_rows
from .seeding import rng_for

CHUNK = 256
RESULT_COLUMNS = ("config_hash", "mu", "K", "lambda", "U", "N", "auc", "meanrank",
                  "cat_auc_L1", "cat_auc_L2", "cat_auc_L3", "coldstart_rank", "users")


@dataclass(frozen=True)
class SplitSpec:
    mu: float = 0.5
    sigma: float = 0.05
    T: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.mu < 1.0:
            raise DomainError("mu must lie in (0, 1)")
        if self.sigma < 0:
            raise DomainError("split sigma must be >= 0")
        if self.T < 1:
            raise DomainError("holdout T must be >= 1")


@dataclass
class HeldOut:
    """Held-out transactions, one case per ``(user, t)``.

    ``source`` is the full log (histories come from it); ``train`` is the log
    the model was trained on, used to exclude already-bought items.
    """

    source: TransactionLog
    train: TransactionLog
    users: np.ndarray
    ts: np.ndarray
    item_ptr: np.ndarray
    items: np.ndarray

    def __len__(self):
        return len(self.users)

    def positives(self, k: int) -> np.ndarray:
        return self.items[self.item_ptr[k]:self.item_ptr[k + 1]]

    @property
    def user_ids(self) -> np.ndarray:
        return np.unique(self.users)

    @classmethod
    def from_cases(cls, source, train, cases: Sequence[tuple[int, int, Sequence[int]]]) -> "HeldOut":
        users = np.array([c[0] for c in cases], dtype=np.int64)
        ts = np.array([c[1] for c in cases], dtype=np.int64)
        sizes = [len(c[2]) for c in cases]
        ptr = np.zeros(len(cases) + 1, dtype=np.int64)
        np.cumsum(sizes, out=ptr[1:])
        items = (np.concatenate([np.asarray(c[2], dtype=np.int64) for c in cases])
                 if cases else np.empty(0, np.int64))
        return cls(source, train, users, ts, ptr, items)

    def cases(self):
        for k in range(len(self)):
            yield int(self.users[k]), int(self.ts[k]), self.positives(k)


@dataclass
class Split:
    train: TransactionLog
    train_core: TransactionLog  # train minus the validation transactions
    validation: HeldOut
    test: HeldOut
    fractions: np.ndarray
    train_counts: np.ndarray


def split(log: TransactionLog, spec: SplitSpec) -> Split:
    counts = log.transaction_counts()
    rng = rng_for(spec.seed, "split")
    f = np.clip(rng.normal(spec.mu, spec.sigma, log.user_count), 0.0, 1.0)
    n_train = np.floor(f * counts + 0.5).astype(np.int64)
    has_val = n_train >= spec.T + 1
    core = np.where(has_val, n_train - spec.T, n_train)
    train = log.prefix(n_train)
    train_core = log.prefix(core)
    val_cases, test_cases = [], []
    for u in range(log.user_count):
        if has_val[u]:
            for t in range(core[u], n_train[u]):
                val_cases.append((u, t, log.basket(u, t)))
        if n_train[u] >= 1:
            for t in range(n_train[u], min(n_train[u] + spec.T, counts[u])):
                test_cases.append((u, t, log.basket(u, t)))
    return Split(train, train_core, HeldOut.from_cases(log, train_core, val_cases),
                 HeldOut.from_cases(log, train, test_cases), f, n_train)


def filter_repeats(held: HeldOut, train_log: TransactionLog | None = None) -> HeldOut:
    """Drop items the user bought in ``train_log``; drop cases left empty."""
    train_log = held.train if train_log is None else train_log
    cases = []
    for u, t, items in held.cases():
        seen = train_log.user_items(u) if u < train_log.user_count else np.empty(0, np.int64)
        kept = items[~np.isin(items, seen)]
        if len(kept):
            cases.append((u, t, kept))
    return HeldOut.from_cases(held.source, train_log, cases)


def _ranks(ranking: Sequence[int], test_set) -> tuple[np.ndarray, int]:
    ranking = np.asarray(ranking, dtype=np.int64)
    if len(np.unique(ranking)) != len(ranking):
        raise DomainError("ranking contains duplicates")
    test = np.unique(np.asarray(list(test_set), dtype=np.int64))
    pos = np.flatnonzero(np.isin(ranking, test))
    if len(pos) != len(test):
        raise DomainError("test items missing from the ranking")
    return pos + 1, len(ranking)


def auc_from_ranks(pos_ranks: np.ndarray, n: int) -> float:
    """AUC of positives at 1-based ``pos_ranks`` in a total ranking of ``n`` items."""
    m = len(pos_ranks)
    if m == 0 or m == n:
        return math.nan
    r = np.sort(np.asarray(pos_ranks, dtype=np.int64))
    below = (n - r) - (m - 1 - np.arange(m))
    return float(below.sum()) / (m * (n - m))


def auc(ranking: Sequence[int], test_set) -> float:
    """Share of (positive, negative) pairs with the positive ranked first.

    ``ranking`` lists the universe best first.  NaN when the test set is
    empty or covers the universe.
    """
    ranks, n = _ranks(ranking, test_set)
    return auc_from_ranks(ranks, n)


def mean_rank(ranking: Sequence[int], test_set) -> float:
    ranks, _ = _ranks(ranking, test_set)
    return float(ranks.mean()) if len(ranks) else math.nan


@dataclass
class EvalReport:
    mean_auc: float
    mean_meanrank: float
    level_auc: dict[int, float]
    cold_start_mean_rank: float
    users: int
    cases: int
    cold_items: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"auc": self.mean_auc, "meanrank": self.mean_meanrank,
               "category_auc": {str(k): v for k, v in self.level_auc.items()},
               "coldstart_rank": self.cold_start_mean_rank, "users": self.users,
               "cases": self.cases, "cold_items": self.cold_items}
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and math.isnan(v):
                return None
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            return v
        return json.dumps(clean(self.to_dict()), sort_keys=True)

    def csv_row(self, config, mu: float, levels: int) -> list:
        def fmt(v):
            return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(v)
        return [config.config_hash(), repr(float(mu)), config.K, repr(float(config.lam)),
                levels, config.N, fmt(self.mean_auc), fmt(self.mean_meanrank),
                fmt(self.level_auc.get(1)), fmt(self.level_auc.get(2)),
                fmt(self.level_auc.get(3)), fmt(self.cold_start_mean_rank), self.users]


def append_results(path, rows: Sequence[list]) -> None:
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        if new:
            out.writerow(RESULT_COLUMNS)
        out.writerows(rows)


def _rank_in_scores(scores: np.ndarray, nodes: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """1-based ranks of ``nodes[idx]`` under descending score, ascending id."""
    out = np.empty(len(idx), dtype=np.int64)
    for k, i in enumerate(idx):
        s = scores[i]
        out[k] = 1 + np.count_nonzero(scores > s) + np.count_nonzero((scores == s) & (nodes < nodes[i]))
    return out


class _Evaluator:
    def __init__(self, model: TFModel, held: HeldOut, mode, category_levels: bool,
                 exclude_train: bool):
        self.model = model
        self.held = held
        self.mode = mode
        tax = model.taxonomy
        self.tax = tax
        self.leaves = tax.level_index[0]
        self.leaf_pos = np.full(tax.node_count, -1, dtype=np.int64)
        self.leaf_pos[self.leaves] = np.arange(len(self.leaves))
        self.cat_levels = list(range(1, tax.depth)) if category_levels else []
        self.exclude_train = exclude_train
        self.cold = np.ones(tax.node_count, dtype=bool)
        self.cold[held.train.purchased_items()] = False

    def _universe_ranks(self, q, level, positives, exclude):
        """Ranks of ``positives`` and the universe size at ``level``."""
        model = self.model
        nodes = self.tax.level_index[level]
        if isinstance(self.mode, CascadeConfig):
            trace = cascade(model, q, self.mode, level, exclude)
            order = cascade_order(model, trace, level, exclude)
            where = np.empty(self.tax.node_count, dtype=np.int64)
            where[order] = np.arange(1, len(order) + 1)
            return where[positives], len(order)
        scores = score_rows(model.item_effective, nodes, q)
        pos_in = np.searchsorted(nodes, positives)
        ranks = _rank_in_scores(scores, nodes, pos_in)
        n = len(nodes)
        if exclude is not None:
            ex = np.flatnonzero(exclude[nodes])
            if len(ex):
                ex_s, ex_n = scores[ex], nodes[ex]
                for k, i in enumerate(pos_in):
                    s = scores[i]
                    ranks[k] -= np.count_nonzero((ex_s > s) | ((ex_s == s) & (ex_n < nodes[i])))
                n -= len(ex)
        return ranks, n

    def case(self, k: int):
        held = self.held
        model = self.model
        u = int(held.users[k])
        t = int(held.ts[k])
        pos = np.unique(held.positives(k))
        q = model.query(u, held.source.history(u, t, model.decay.N))
        exclude = None
        if self.exclude_train and u < held.train.user_count:
            seen = held.train.user_items(u)
            seen = seen[~np.isin(seen, pos)]
            if len(seen):
                exclude = np.zeros(self.tax.node_count, dtype=bool)
                exclude[seen] = True
        ranks, n = self._universe_ranks(q, 0, pos, exclude)
        leaf_auc = auc_from_ranks(ranks, n)
        leaf_mr = float(ranks.mean())
        cold_ranks = ranks[self.cold[pos]]
        cats = []
        for lv in self.cat_levels:
            if lv >= model.levels:
                cats.append(math.nan)
                continue
            anc = np.unique(self.tax.paths[pos, lv])
            r, m = self._universe_ranks(q, lv, anc, None)
            cats.append(auc_from_ranks(r, m))
        return leaf_auc, leaf_mr, cold_ranks, cats

    def run(self, threads: int):
        n = len(self.held)
        chunks = [range(a, min(a + CHUNK, n)) for a in range(0, n, CHUNK)]

        def work(chunk):
            return [self.case(k) for k in chunk]

        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(threads) as pool:
                parts = list(pool.map(work, chunks))
        else:
            parts = [work(c) for c in chunks]
        return [r for part in parts for r in part]


def _user_mean(users: np.ndarray, values: np.ndarray) -> tuple[float, int]:
    """Mean over users of each user's mean over defined (non-NaN) values."""
    per_user = []
    for u in np.unique(users):
        v = values[(users == u) & ~np.isnan(values)]
        if len(v):
            per_user.append(float(v.mean()))
    return (math.fsum(per_user) / len(per_user) if per_user else math.nan), len(per_user)


def evaluate(model: TFModel, held: HeldOut, mode: str | CascadeConfig = "exhaustive",
             threads: int = 1, category_levels: bool = True,
             exclude_train: bool = True) -> EvalReport:
    """Average AUC / meanRank over users, category-level AUC and cold-start rank.

    ``mode`` is ``"exhaustive"`` or a :class:`CascadeConfig`.  Under a cascade,
    leaves that were never reached rank below every reached leaf.  Results do
    not depend on ``threads``.
    """
    if isinstance(mode, str) and mode != "exhaustive":
        raise DomainError(f"unknown evaluation mode {mode!r}")
    if len(held) == 0:
        raise DomainError("nothing to evaluate: held-out slice is empty")
    if threads < 1:
        raise DomainError("threads must be >= 1")
    ev = _Evaluator(model, held, mode, category_levels, exclude_train)
    results = ev.run(threads)
    users = held.users
    aucs = np.array([r[0] for r in results])
    mean_auc, n_users = _user_mean(users, aucs)
    mean_mr, _ = _user_mean(users, np.array([r[1] for r in results]))
    cold = np.concatenate([r[2] for r in results]).astype(np.float64)
    level_auc = {}
    for j, lv in enumerate(ev.cat_levels):
        level_auc[lv], _ = _user_mean(users, np.array([r[3][j] for r in results]))
    return EvalReport(mean_auc, mean_mr, level_auc,
                      math.fsum(cold) / len(cold) if len(cold) else math.nan,
                      n_users, len(held), len(cold))


def holdout_last(log: TransactionLog, T: int = 1) -> tuple[TransactionLog, HeldOut]:
    """Hold out each user's last ``T`` transactions (users with more than ``T``)."""
    if T < 1:
        raise DomainError("holdout T must be >= 1")
    counts = log.transaction_counts()
    keep = np.where(counts >= T + 1, counts - T, counts)
    core = log.prefix(keep)
    cases = [(u, t, log.basket(u, t)) for u in range(log.user_count)
             for t in range(keep[u], counts[u])]
    return core, HeldOut.from_cases(log, core, cases)
