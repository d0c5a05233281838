"""Seeded synthetic corpus: a balanced taxonomy and taxonomy-coherent shoppers.

Each user carries a Dirichlet preference over top-level categories and, per
visited category, a noisy copy of the global popularity of its children.  A
basket is 1-3 leaves from one bottom category (the parent level of the
leaves).  With probability ``beta`` a basket instead comes from the
accessory of the previous basket's category: a fixed bottom category under a
different top-level category.  A small
share of leaves is only released part-way through each user's sequence, so
they are rare or absent in training prefixes.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DomainError
from ..seeding import rng_for
from ..taxonomy import Taxonomy, write_taxonomy
from .transactions import TransactionLog, write_transactions

TAXONOMY_FILE = "taxonomy.tsv"
TRANSACTIONS_FILE = "transactions.txt"
GROUND_TRUTH_FILE = "ground_truth.jsonl"


@dataclass(frozen=True)
class SynthSpec:
    users: int = 10_000
    branching: tuple[int, ...] = (23, 12, 5, 7)  # children per node, top level first
    tx_mean: float = 4.0
    basket_min: int = 1
    basket_max: int = 3
    concentration: float = 0.1  # Dirichlet over top-level categories
    taste: float = 2.0  # scale of the per-user Dirichlet around global popularity
    beta: float = 0.4
    cold_fraction: float = 0.05
    release: float = 0.5  # cold leaves appear from transaction floor(release * n + 0.5) on
    popularity_sigma: float = 1.0
    zipf: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "branching", tuple(int(b) for b in self.branching))
        if self.users < 1:
            raise DomainError("users must be >= 1")
        if not self.branching or any(b < 2 for b in self.branching):
            raise DomainError("branching needs at least one level and >= 2 children per node")
        if len(self.branching) < 2:
            raise DomainError("branching needs a category level above the leaves")
        if not self.tx_mean >= 1:
            raise DomainError("tx_mean must be >= 1")
        if not 1 <= self.basket_min <= self.basket_max:
            raise DomainError("basket sizes need 1 <= basket_min <= basket_max")
        if self.concentration <= 0 or self.taste <= 0:
            raise DomainError("concentration and taste must be > 0")
        if not 0.0 <= self.beta <= 1.0:
            raise DomainError("beta must lie in [0, 1]")
        if not 0.0 <= self.cold_fraction < 1.0:
            raise DomainError("cold_fraction must lie in [0, 1)")
        if not 0.0 <= self.release <= 1.0:
            raise DomainError("release must lie in [0, 1]")
        if self.popularity_sigma < 0 or self.zipf < 0:
            raise DomainError("popularity_sigma and zipf must be >= 0")


@dataclass
class SyntheticCorpus:
    spec: SynthSpec
    taxonomy: Taxonomy
    log: TransactionLog
    top_preference: np.ndarray  # users x top-level categories
    accessory: dict[int, int]  # bottom category -> its accessory category
    cold: np.ndarray  # withheld leaves
    basket_category: list[list[int]] = field(repr=False, default_factory=list)


def _build_tree(branching):
    parent = [-1]
    levels = [[0]]
    for depth, b in enumerate(branching):
        nxt = []
        for p in levels[-1]:
            for _ in range(b):
                parent.append(p)
                nxt.append(len(parent) - 1)
        levels.append(nxt)
    return parent, levels


def synthesize(spec: SynthSpec) -> SyntheticCorpus:
    """Generate a corpus in memory (deterministic under ``spec.seed``)."""
    rng = rng_for(spec.seed, "synthetic")
    parent_list, levels = _build_tree(spec.branching)
    # file ids: node k of the generated tree is external id k-1 (the root is implicit)
    leaf_set = set(levels[-1])
    records = [(k - 1, parent_list[k] - 1 if parent_list[k] > 0 else -1,
                f"item{k - 1}" if k in leaf_set else f"cat{k - 1}")
               for k in range(1, len(parent_list))]
    tax = Taxonomy.from_records(records)
    ext_to_int = {int(e): i for i, e in enumerate(tax.external_ids)}
    conv = lambda k: ext_to_int[k - 1]

    top = np.array([conv(k) for k in levels[1]], dtype=np.int64)
    bottom = np.array([conv(k) for k in levels[-2]], dtype=np.int64)
    leaves = tax.leaves

    # global popularity among siblings; leaves get an extra Zipf factor
    weight = rng.lognormal(0.0, spec.popularity_sigma, tax.node_count)
    for b in bottom:
        kids = tax.children(b)
        ranks = rng.permutation(len(kids))
        weight[kids] *= (1.0 / (ranks + 1.0)) ** spec.zipf

    def child_probs(node):
        kids = tax.children(node)
        w = weight[kids]
        return kids, w / w.sum()

    # accessories live under a different top-level category than their source
    bottom_top = tax.paths[bottom, tax.depth - 2]
    accessory = {}
    for b, bt in zip(bottom, bottom_top):
        pool = bottom[bottom_top != bt]
        accessory[int(b)] = int(pool[rng.integers(len(pool))])

    n_cold = int(round(spec.cold_fraction * len(leaves)))
    cold = np.zeros(tax.node_count, dtype=bool)
    free = {int(b): len(tax.children(b)) for b in bottom}
    marked = 0
    for leaf in rng.permutation(leaves):
        if marked >= n_cold:
            break
        par = int(tax.parent[leaf])
        if free[par] >= 2:
            cold[leaf] = True
            free[par] -= 1
            marked += 1

    top_pref = rng.dirichlet(np.full(len(top), spec.concentration), spec.users)
    baskets: list[list[list[int]]] = []
    categories: list[list[int]] = []
    p_geom = 1.0 / spec.tx_mean
    for u in range(spec.users):
        taste: dict[int, tuple[np.ndarray, np.ndarray]] = {}

        def prefs(node):
            if node not in taste:
                kids, p = child_probs(node)
                taste[node] = (kids, rng.dirichlet(spec.taste * len(kids) * p + 1e-3))
            return taste[node]

        def descend(node):
            while tax.level[node] > 1:
                kids, p = prefs(node)
                node = int(kids[rng.choice(len(kids), p=p)])
            return node

        n = int(rng.geometric(p_geom))
        release_t = math.floor(spec.release * n + 0.5)
        seq, cats = [], []
        prev = -1
        for t in range(n):
            if prev >= 0 and rng.random() < spec.beta:
                cat = accessory[prev]
            else:
                cat = descend(int(top[rng.choice(len(top), p=top_pref[u])]))
            kids, p = prefs(cat)
            if t < release_t:
                ok = ~cold[kids]
                kids, p = kids[ok], p[ok]
            p = p + 1e-12
            p = p / p.sum()
            size = min(int(rng.integers(spec.basket_min, spec.basket_max + 1)), len(kids))
            items = rng.choice(kids, size, replace=False, p=p)
            seq.append(sorted(int(i) for i in items))
            cats.append(cat)
            prev = cat
        baskets.append(seq)
        categories.append(cats)

    log = TransactionLog(tax, baskets)
    return SyntheticCorpus(spec, tax, log, top_pref, accessory, np.flatnonzero(cold), categories)


def generate_synthetic(spec: SynthSpec, out_dir) -> tuple[Path, Path, Path]:
    """Write taxonomy, transactions and ground-truth files into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = synthesize(spec)
    tax = corpus.taxonomy
    ext = tax.external_ids
    paths = (out / TAXONOMY_FILE, out / TRANSACTIONS_FILE, out / GROUND_TRUTH_FILE)
    write_taxonomy(tax, paths[0])
    write_transactions(corpus.log, paths[1])
    top = tax.level_index[tax.depth - 1]
    with open(paths[2], "w", encoding="utf-8") as fh:
        meta = {"kind": "meta", "spec": {**asdict(spec), "branching": list(spec.branching)},
                "top_categories": [int(ext[c]) for c in top],
                "accessory": {str(int(ext[a])): int(ext[b]) for a, b in corpus.accessory.items()},
                "cold": [int(ext[c]) for c in corpus.cold]}
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for u in range(spec.users):
            row = {"kind": "user", "user": u,
                   "top_preference": [float(x) for x in corpus.top_preference[u]]}
            fh.write(json.dumps(row) + "\n")
    return paths


def read_ground_truth(path) -> tuple[dict, list[dict]]:
    with open(path, encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    return rows[0], rows[1:]
