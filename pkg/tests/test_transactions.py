import numpy as np
import pytest

from taxrec.data.transactions import (TransactionLog, load_dataset, load_transactions,
                                      write_transactions)
from taxrec.errors import DomainError, TransactionFormatError
from taxrec.taxonomy import UNCATEGORIZED_LABEL, write_taxonomy


def test_csr_layout(small_tax):
    leaves = small_tax.leaves
    log = TransactionLog(small_tax, [[[leaves[3], leaves[1], leaves[3]], [leaves[0]]], [[leaves[2]]]])
    assert log.user_count == 2 and log.basket_count == 3
    assert list(log.basket(0, 0)) == sorted([leaves[1], leaves[3]])
    assert log.transaction_count(0) == 2
    assert log.triple_count == 4
    users, ts, items, baskets = log.triples
    assert list(users) == [0, 0, 0, 1] and list(ts) == [0, 0, 1, 0]
    assert list(baskets) == [0, 0, 1, 2]


def test_history_is_most_recent_first(small_log):
    u = int(np.argmax(small_log.transaction_counts()))
    n = small_log.transaction_count(u)
    hist = small_log.history(u, n - 1, 3)
    assert np.array_equal(hist[0], small_log.basket(u, n - 2))
    assert len(small_log.history(u, 1, 3)) == 1
    assert small_log.history(u, 0, 3) == []


def test_in_basket_matches_python(small_log):
    rng = np.random.default_rng(1)
    b = rng.integers(0, small_log.basket_count, 500)
    items = rng.choice(small_log.taxonomy.leaves, 500)
    got = small_log.in_basket(b, items)
    want = [int(i) in set(small_log.items[small_log.basket_ptr[x]:small_log.basket_ptr[x + 1]].tolist())
            for x, i in zip(b, items)]
    assert got.tolist() == want


def test_rejects_internal_nodes_and_empty_baskets(small_tax):
    with pytest.raises(DomainError):
        TransactionLog(small_tax, [[[small_tax.root_id]]])
    with pytest.raises(DomainError):
        TransactionLog(small_tax, [[[]]])


def test_prefix(small_log):
    counts = np.minimum(small_log.transaction_counts(), 2)
    pre = small_log.prefix(counts)
    assert np.array_equal(pre.transaction_counts(), counts)
    for u in range(pre.user_count):
        for t in range(counts[u]):
            assert np.array_equal(pre.basket(u, t), small_log.basket(u, t))


def test_file_round_trip(tmp_path, small_log):
    write_taxonomy(small_log.taxonomy, tmp_path / "tax.tsv")
    write_transactions(small_log, tmp_path / "tx.txt")
    back = load_dataset(tmp_path / "tax.tsv", tmp_path / "tx.txt")
    assert back == small_log


def test_unknown_items_routed_to_uncategorized(tmp_path, small_tax):
    leaf_ext = int(small_tax.external_ids[small_tax.leaves[0]])
    path = tmp_path / "tx.txt"
    path.write_text(f"0 0 {leaf_ext} 9999\n1 0 9999\n")
    log = load_transactions(path, small_tax)
    assert log.unknown_items == 1
    tax = log.taxonomy
    node = tax.internal_id(9999)
    assert tax.level[node] == 0
    assert UNCATEGORIZED_LABEL in [tax.labels[a] for a in tax.ancestor_path(node)]


@pytest.mark.parametrize("text, line", [
    ("0 0 1\n0 2 1\n", 2),
    ("0 0\n", 1),
    ("0 x 1\n", 1),
])
def test_malformed_lines(tmp_path, small_tax, text, line):
    path = tmp_path / "tx.txt"
    path.write_text(text)
    with pytest.raises(TransactionFormatError) as info:
        load_transactions(path, small_tax)
    assert info.value.line == line


def test_category_item_rejected(tmp_path, small_tax):
    cat = int(small_tax.external_ids[small_tax.level_index[1][0]])
    path = tmp_path / "tx.txt"
    path.write_text(f"0 0 {cat}\n")
    with pytest.raises(TransactionFormatError):
        load_transactions(path, small_tax)


def test_two_lines_one_user(tmp_path, small_tax):
    ext = [int(small_tax.external_ids[x]) for x in small_tax.leaves[:2]]
    path = tmp_path / "tx.txt"
    path.write_text(f"5 0 {ext[1]}\n5 1 {ext[0]} {ext[0]} {ext[1]}\n")
    log = load_transactions(path, small_tax)
    assert log.user_count == 1 and log.transaction_count(0) == 2
    assert log.basket(0, 0).tolist() == [small_tax.internal_id(ext[1])]
    assert sorted(log.basket(0, 1).tolist()) == sorted(small_tax.internal_id(e) for e in ext)
    assert log.user_labels.tolist() == [5]
