import math

import numpy as np
import pytest

from taxrec.errors import DomainError
from taxrec.factors import DecayWeights, FactorStore, TFModel
from taxrec.ranker import (CascadeConfig, cascade, cascade_order, rank_cascaded, rank_exhaustive,
                           recommend_topk)

from conftest import balanced_taxonomy


def random_model(tax, seed, K=4, N=0, levels=None, users=3):
    store = FactorStore.initialize(K, users, tax.node_count, np.random.default_rng(seed), std=1.0)
    return TFModel(store, tax, tax.depth + 1 if levels is None else levels, DecayWeights(N))


@pytest.fixture(scope="module")
def tax():
    return balanced_taxonomy((4, 3, 5))


def test_exhaustive_matches_sorted_scores(tax):
    model = random_model(tax, 0)
    res = rank_exhaustive(model, 1)
    eff = model.item_effective
    q = model.store.user[1]
    want = sorted(tax.leaves.tolist(), key=lambda n: (-float(eff[n] @ q), n))
    assert res.nodes.tolist() == want
    assert np.allclose(res.scores, eff[res.nodes] @ q)
    assert res.scored == len(tax.leaves)


def test_ties_break_on_id(tax):
    store = FactorStore.zeros(2, 1, tax.node_count)
    model = TFModel(store, tax, 4, DecayWeights(0))
    res = rank_exhaustive(model, 0)
    assert res.nodes.tolist() == sorted(tax.leaves.tolist())


def test_category_level_ranking(tax):
    model = random_model(tax, 1)
    res = rank_exhaustive(model, 0, level=2)
    assert sorted(res.nodes.tolist()) == sorted(tax.level_index[2].tolist())
    with pytest.raises(DomainError):
        rank_exhaustive(model, 0, level=3)


def test_exclusion(tax):
    model = random_model(tax, 2)
    drop = tax.leaves[:7]
    res = rank_exhaustive(model, 0, exclude=drop)
    assert not set(drop.tolist()) & set(res.nodes.tolist())
    assert len(res) == len(tax.leaves) - 7


@pytest.mark.parametrize("seed", range(10))
def test_full_cascade_is_exhaustive(tax, seed):
    model = random_model(tax, seed, N=1)
    hist = [[int(tax.leaves[seed]), int(tax.leaves[-1 - seed])]]
    for level in (0, 1):
        ex = rank_exhaustive(model, seed % 3, hist, level)
        ca = rank_cascaded(model, seed % 3, hist, CascadeConfig.uniform(1.0, 3), level)
        assert ca.entries == ex.entries


def test_single_survivor_path_is_greedy(tax):
    model = random_model(tax, 5)
    q = model.store.user[0]
    eff = model.item_effective
    res = rank_cascaded(model, 0, (), CascadeConfig.uniform(1e-3, 3))
    node = tax.root_id
    greedy = []
    for _ in range(3):
        kids = tax.children(node)
        node = int(kids[np.argmax(eff[kids] @ q)])
        greedy.append(node)
    assert res.nodes.tolist() == [greedy[-1]]
    assert res.cascade_path(greedy[-1]) == tuple(greedy[:-1])
    assert res.scored == 4 + 3 + 5


def test_scored_count_and_keep_sizes(tax):
    model = random_model(tax, 6)
    config = CascadeConfig((0.5, 0.5, 0.3))
    tr = cascade(model, model.store.user[0], config, 0)
    # top: score 4, keep 2; middle: score 6, keep ceil(0.5 * 12) = 6; leaves: score 30, keep 18
    assert tr.scored == 4 + 6 + 30
    assert len(tr.survivors) == math.ceil(0.3 * 60)
    assert [len(c) for _, c in tr.pruned] == [2, 0, 12]


def test_cascade_order_is_a_full_ranking(tax):
    model = random_model(tax, 7)
    q = model.store.user[2]
    tr = cascade(model, q, CascadeConfig.uniform(0.5, 3), 0)
    order = cascade_order(model, tr, 0)
    assert sorted(order.tolist()) == sorted(tax.leaves.tolist())
    assert order[:len(tr.survivors)].tolist() == tr.survivors.tolist()
    # leaves of cut bottom categories precede leaves of cut top categories
    cut_top = set(tr.pruned[0][1].tolist())
    under_top = [tax.paths[n, 2] in cut_top for n in order]
    first = under_top.index(True)
    assert all(under_top[first:])


def test_keep_count_bounds():
    config = CascadeConfig((0.5, 0.01))
    assert config.keep_count(0, 2, 100, 100) == 1
    assert config.keep_count(1, 2, 10, 3) == 3
    assert config.keep_count(0, 2, 100, 0) == 0
    with pytest.raises(DomainError):
        config.fraction_at(0, 3)
    with pytest.raises(DomainError):
        CascadeConfig((0.0,))
    with pytest.raises(DomainError):
        CascadeConfig((1.5,))


def test_recommend_topk(tax):
    model = random_model(tax, 8)
    top = recommend_topk(model, 0, (), 5)
    full = rank_exhaustive(model, 0)
    assert top.entries == full.entries[:5]
    small = recommend_topk(model, 0, (), 50, CascadeConfig.uniform(0.25, 3))
    assert len(small) <= 50
    with pytest.raises(DomainError):
        recommend_topk(model, 0, (), 0)
    with pytest.raises(DomainError):
        recommend_topk(model, 0, (), 3, mode="beam")


def test_flat_model_cascade_degrades_gracefully(tax):
    # with a single used level every category scores zero; the cascade still returns leaves
    model = random_model(tax, 9, levels=1)
    res = rank_cascaded(model, 0, (), CascadeConfig.uniform(1.0, 3))
    assert res.entries == rank_exhaustive(model, 0).entries


def test_single_item_universe():
    from taxrec.taxonomy import Taxonomy
    tax = Taxonomy.from_records([(0, -1, "c"), (1, 0, "x")])
    model = random_model(tax, 0, levels=2)
    res = rank_exhaustive(model, 0)
    assert res.nodes.tolist() == [tax.internal_id(1)]


def test_scalar_loop_oracle():
    tax = balanced_taxonomy((2, 5))
    model = random_model(tax, 3, K=2)
    q = model.store.user[0]
    scores = {}
    for leaf in tax.leaves:
        v = [0.0, 0.0]
        for a in tax.ancestor_path(int(leaf)):
            for k in range(2):
                v[k] += model.store.item[a, k]
        scores[int(leaf)] = q[0] * v[0] + q[1] * v[1]
    want = sorted(scores, key=lambda n: (-scores[n], n))
    assert rank_exhaustive(model, 0).nodes.tolist() == want


@pytest.mark.parametrize("fractions", [(0.5, 0.5, 0.5), (0.2, 0.7, 0.4), (1.0, 0.1, 1.0)])
def test_pruning_bound(tax, fractions):
    model = random_model(tax, 4)
    config = CascadeConfig(fractions)
    max_branching = max(len(tax.children(n)) for n in range(tax.node_count))
    tr = cascade(model, model.store.user[0], config, 0)
    kept = [config.keep_count(lv, 3, len(tax.level_index[lv]), len(tax.level_index[lv]))
            for lv in (2, 1)]
    assert tr.scored <= len(tax.level_index[2]) + sum(kept) * max_branching


def test_topk_edges(tax):
    model = random_model(tax, 10)
    everything = recommend_topk(model, 0, (), 1000)
    assert len(everything) == len(tax.leaves)
    best = recommend_topk(model, 0, (), 1)
    scores = model.item_effective[tax.leaves] @ model.store.user[0]
    assert best.nodes.tolist() == [int(tax.leaves[np.argmax(scores)])]


def test_cascaded_top10_overlaps_exhaustive(small_corpus):
    from taxrec.trainer import ModelConfig, train
    model = train(small_corpus.log, config=ModelConfig(K=10, epochs=10, seed=0)).model
    config = CascadeConfig.uniform(0.5, model.taxonomy.depth)
    overlaps = []
    for u in range(0, small_corpus.log.user_count, 4):
        ex = set(recommend_topk(model, u, (), 10).nodes.tolist())
        ca = set(recommend_topk(model, u, (), 10, config).nodes.tolist())
        overlaps.append(len(ex & ca))
    assert np.mean(overlaps) >= 8


def _reached(model, fractions):
    q = model.store.user[0]
    return set(cascade(model, q, CascadeConfig(fractions), 0).survivors.tolist())


@pytest.mark.parametrize("seed", range(20))
def test_coverage_grows_when_lower_levels_keep_everything(tax, seed):
    model = random_model(tax, 100 + seed)
    for top, mid, leaf in [(0.25, 0.2, 0.1), (0.5, 1.0, 1.0), (0.25, 0.5, 1.0)]:
        small = _reached(model, (top, mid, leaf))
        # widen the lowest pruned level; everything below it stays at the same or full fraction
        assert small <= _reached(model, (top, mid, min(1.0, 2 * leaf)))
        if leaf == 1.0:
            assert small <= _reached(model, (top, min(1.0, 2 * mid), 1.0))
            if mid == 1.0:
                assert small <= _reached(model, (min(1.0, 2 * top), 1.0, 1.0))


def test_widening_an_upper_level_can_drop_leaves(tax):
    # with a fixed leaf count, new parents compete for the same slots
    drops = 0
    for seed in range(50):
        model = random_model(tax, 200 + seed)
        drops += not _reached(model, (0.25, 0.2, 0.05)) <= _reached(model, (1.0, 0.2, 0.05))
    assert drops > 0
