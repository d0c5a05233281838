import re

import numpy as np
import pytest

from taxrec.data.synthetic import SynthSpec, synthesize
from taxrec.data.transactions import TransactionLog
from taxrec.taxonomy import Taxonomy

from verdicts import ACCEPTANCE


def tree_records(branching):
    """Records of a balanced forest; external ids are assigned breadth-first."""
    records = []
    frontier = [-1]
    next_id = 0
    for depth, b in enumerate(branching):
        nxt = []
        leaf_level = depth == len(branching) - 1
        for parent in frontier:
            for _ in range(b):
                records.append((next_id, parent, f"item{next_id}" if leaf_level else f"cat{next_id}"))
                nxt.append(next_id)
                next_id += 1
        frontier = nxt
    return records


def balanced_taxonomy(branching):
    return Taxonomy.from_records(tree_records(branching))


def random_log(tax, rng, users=20, max_tx=6, max_basket=3):
    leaves = tax.leaves
    baskets = []
    for _ in range(users):
        n = int(rng.integers(1, max_tx + 1))
        seq = []
        for _ in range(n):
            size = int(rng.integers(1, max_basket + 1))
            seq.append(rng.choice(leaves, size, replace=False).tolist())
        baskets.append(seq)
    return TransactionLog(tax, baskets)


@pytest.fixture(scope="session")
def small_tax():
    return balanced_taxonomy((3, 2, 4))


@pytest.fixture(scope="session")
def small_log(small_tax):
    return random_log(small_tax, np.random.default_rng(7), users=30)


@pytest.fixture(scope="session")
def small_corpus():
    return synthesize(SynthSpec(users=400, branching=(4, 3, 6), tx_mean=5, seed=3))


# acceptance verdicts, printed once at the end of the run

def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    def order(name):  # "10a" sorts after "9"
        digits = re.match(r"\d*", name).group()
        return int(digits or 0), name

    for name in sorted(ACCEPTANCE, key=order):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {name}: {detail}")
