"""Per-user ordered basket sequences and the text format they are stored in.

File format, one basket per line::

    user_id t_index item_id [item_id ...]

``t_index`` runs 0, 1, 2, ... per user in file order.  Lines starting with
``#`` are comments.  Item ids are taxonomy node ids (external numbering).
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import DomainError, TransactionFormatError
from ..taxonomy import Taxonomy, read_taxonomy_records

log = logging.getLogger(__name__)


class TransactionLog:
    """Immutable purchase log in CSR layout.

    ``user_ptr[u]:user_ptr[u+1]`` indexes the user's baskets, and
    ``basket_ptr[b]:basket_ptr[b+1]`` the (sorted, de-duplicated) internal
    leaf ids of basket ``b``.  Baskets of a user are stored in time order, so
    transaction ``t`` of user ``u`` is global basket ``user_ptr[u] + t``.
    """

    def __init__(self, taxonomy: Taxonomy, baskets: Sequence[Sequence[Iterable[int]]],
                 user_labels: Sequence[int] | None = None, unknown_items: int = 0):
        self.taxonomy = taxonomy
        level = taxonomy.level
        user_ptr = [0]
        basket_ptr = [0]
        items: list[int] = []
        for u, seq in enumerate(baskets):
            for basket in seq:
                b = sorted({int(i) for i in basket})
                if not b:
                    raise DomainError(f"user {u} has an empty basket")
                for i in b:
                    if not 0 <= i < taxonomy.node_count or level[i] != 0:
                        raise DomainError(f"item {i} is not a leaf of the taxonomy")
                items.extend(b)
                basket_ptr.append(len(items))
            user_ptr.append(len(basket_ptr) - 1)
        self.user_ptr = np.asarray(user_ptr, dtype=np.int64)
        self.basket_ptr = np.asarray(basket_ptr, dtype=np.int64)
        self.items = np.asarray(items, dtype=np.int64)
        for arr in (self.user_ptr, self.basket_ptr, self.items):
            arr.setflags(write=False)
        n_users = len(baskets)
        self.user_labels = (np.arange(n_users, dtype=np.int64) if user_labels is None
                            else np.asarray(user_labels, dtype=np.int64))
        if len(self.user_labels) != n_users:
            raise DomainError("user_labels length does not match the number of users")
        self.unknown_items = unknown_items
        self._triples = None
        self._flat = None

    @property
    def user_count(self) -> int:
        return len(self.user_ptr) - 1

    @property
    def basket_count(self) -> int:
        return len(self.basket_ptr) - 1

    def transaction_count(self, user: int) -> int:
        return int(self.user_ptr[user + 1] - self.user_ptr[user])

    def transaction_counts(self) -> np.ndarray:
        return np.diff(self.user_ptr)

    def basket(self, user: int, t: int) -> np.ndarray:
        if not 0 <= t < self.transaction_count(user):
            raise DomainError(f"user {user} has no transaction {t}")
        b = self.user_ptr[user] + t
        return self.items[self.basket_ptr[b]:self.basket_ptr[b + 1]]

    def baskets(self, user: int) -> list[np.ndarray]:
        return [self.basket(user, t) for t in range(self.transaction_count(user))]

    def history(self, user: int, t: int, n: int) -> list[np.ndarray]:
        """Previous baskets ``[B_{t-1}, ..., B_{t-n}]``, cut short at t=0."""
        return [self.basket(user, t - k) for k in range(1, n + 1) if t - k >= 0]

    def user_items(self, user: int) -> np.ndarray:
        lo = self.basket_ptr[self.user_ptr[user]]
        hi = self.basket_ptr[self.user_ptr[user + 1]]
        return np.unique(self.items[lo:hi])

    def purchased_items(self) -> np.ndarray:
        return np.unique(self.items)

    @property
    def triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Flat positive triples as arrays ``(user, t, item, basket)``."""
        if self._triples is None:
            sizes = np.diff(self.basket_ptr)
            basket = np.repeat(np.arange(self.basket_count, dtype=np.int64), sizes)
            basket_user = np.repeat(np.arange(self.user_count, dtype=np.int64),
                                    np.diff(self.user_ptr))
            user = basket_user[basket]
            t = basket - self.user_ptr[user]
            self._triples = (user, t, self.items.copy(), basket)
        return self._triples

    @property
    def triple_count(self) -> int:
        return len(self.items)

    def in_basket(self, basket: np.ndarray, item: np.ndarray) -> np.ndarray:
        """Vectorised membership test ``item[k] in basket[k]``."""
        basket = np.asarray(basket, dtype=np.int64)
        item = np.asarray(item, dtype=np.int64)
        lo = self.basket_ptr[basket]
        hi = self.basket_ptr[basket + 1]
        # baskets are sorted, so one binary search per row over the flat array
        if self._flat is None:
            keys = np.repeat(np.arange(self.basket_count, dtype=np.int64), np.diff(self.basket_ptr))
            self._flat = keys * self.taxonomy.node_count + self.items
        flat = self._flat
        q = basket * self.taxonomy.node_count + item
        pos = np.searchsorted(flat, q)
        found = pos < hi
        found &= pos >= lo
        found[found] = flat[pos[found]] == q[found]
        return found

    def prefix(self, counts: Sequence[int]) -> "TransactionLog":
        """Log keeping the first ``counts[u]`` transactions of every user."""
        return TransactionLog(self.taxonomy,
                              [self.baskets(u)[:int(c)] for u, c in enumerate(counts)],
                              self.user_labels)

    def __eq__(self, other):
        if not isinstance(other, TransactionLog):
            return NotImplemented
        return (np.array_equal(self.user_ptr, other.user_ptr)
                and np.array_equal(self.basket_ptr, other.basket_ptr)
                and np.array_equal(self.items, other.items)
                and np.array_equal(self.user_labels, other.user_labels))

    def __repr__(self):
        return (f"TransactionLog(users={self.user_count}, baskets={self.basket_count}, "
                f"triples={self.triple_count})")


def read_transaction_lines(path) -> tuple[list[int], list[list[list[int]]]]:
    """Parse the text format into ``(user_labels, per-user baskets)``.

    Items are left as external ids.  Users are numbered densely in ascending
    order of their external id.
    """
    per_user: dict[int, list[list[int]]] = {}
    seen_line = False
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            seen_line = True
            parts = stripped.split()
            if len(parts) < 3:
                raise TransactionFormatError("expected user_id t_index item_id [item_id ...]", lineno)
            try:
                user, t, *items = (int(p) for p in parts)
            except ValueError:
                raise TransactionFormatError("fields must be integers", lineno) from None
            if user < 0 or any(i < 0 for i in items):
                raise TransactionFormatError("ids must be non-negative", lineno)
            seq = per_user.setdefault(user, [])
            if t != len(seq):
                raise TransactionFormatError(
                    f"user {user}: expected t_index {len(seq)}, got {t}", lineno)
            seq.append(items)
    if not seen_line:
        raise TransactionFormatError(f"{path}: no transactions")
    labels = sorted(per_user)
    return labels, [per_user[u] for u in labels]


def load_transactions(path, taxonomy: Taxonomy) -> TransactionLog:
    """Load a transaction file against ``taxonomy``.

    Items missing from the taxonomy are routed under the UNCATEGORIZED node;
    in that case the returned log carries an extended taxonomy
    (``log.taxonomy``) and ``log.unknown_items`` counts the distinct ids.
    Items naming internal (category) nodes are rejected.
    """
    labels, raw = read_transaction_lines(path)
    unknown = sorted({i for seq in raw for b in seq for i in b if not taxonomy.has_external(i)})
    if unknown:
        log.warning("%d item ids absent from the taxonomy; routed to UNCATEGORIZED", len(unknown))
        taxonomy = _extend(taxonomy, unknown)
    try:
        baskets = [[[taxonomy.internal_id(i) for i in b] for b in seq] for seq in raw]
        return TransactionLog(taxonomy, baskets, labels, unknown_items=len(unknown))
    except DomainError as exc:
        raise TransactionFormatError(f"{path}: {exc}") from exc


def load_dataset(taxonomy_path, transactions_path) -> TransactionLog:
    from ..taxonomy import load_taxonomy

    return load_transactions(transactions_path, load_taxonomy(taxonomy_path))


def _extend(taxonomy: Taxonomy, items: Sequence[int]) -> Taxonomy:
    records = []
    for k in range(taxonomy.node_count):
        if k == taxonomy.root_id:
            continue
        p = int(taxonomy.parent[k])
        pext = -1 if p == taxonomy.root_id else int(taxonomy.external_ids[p])
        records.append((int(taxonomy.external_ids[k]), pext, taxonomy.labels[k]))
    return Taxonomy.from_records(records, items)


def write_transactions(log: TransactionLog, path) -> None:
    ext = log.taxonomy.external_ids
    lines = ["# user_id t_index item_id [item_id ...]\n"]
    for u in range(log.user_count):
        label = int(log.user_labels[u])
        for t, b in enumerate(log.baskets(u)):
            lines.append(f"{label} {t} " + " ".join(str(int(ext[i])) for i in b) + "\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


__all__ = [
    "TransactionLog",
    "load_transactions",
    "load_dataset",
    "write_transactions",
    "read_transaction_lines",
    "read_taxonomy_records",
]
