import math

import numpy as np
import pytest

from taxrec.data.transactions import TransactionLog
from taxrec.errors import DomainError
from taxrec.evaluation import (HeldOut, SplitSpec, append_results, auc, auc_from_ranks, evaluate,
                               filter_repeats, holdout_last, mean_rank, split)
from taxrec.factors import DecayWeights, FactorStore, TFModel
from taxrec.ranker import CascadeConfig, cascade, cascade_order, rank_exhaustive
from taxrec.trainer import ModelConfig, train

from oracles import brute_auc, brute_mean_rank


@pytest.mark.parametrize("seed", range(30))
def test_metrics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    ranking = rng.permutation(1000)[:n].tolist()
    m = int(rng.integers(1, n))
    pos = rng.choice(ranking, m, replace=False).tolist()
    assert auc(ranking, pos) == brute_auc(ranking, pos)
    assert mean_rank(ranking, pos) == brute_mean_rank(ranking, pos)


def test_metric_edges():
    assert auc([3, 1, 2], [3]) == 1.0
    assert auc([3, 1, 2], [2]) == 0.0
    assert math.isnan(auc([1, 2], [1, 2]))
    assert math.isnan(auc_from_ranks(np.array([], dtype=np.int64), 5))
    with pytest.raises(DomainError):
        auc([1, 2, 3], [4])
    with pytest.raises(DomainError):
        auc([1, 1, 2], [1])


def test_reversal_complements_auc():
    rng = np.random.default_rng(3)
    ranking = rng.permutation(30).tolist()
    pos = ranking[2:9:2]
    assert auc(ranking, pos) + auc(ranking[::-1], pos) == pytest.approx(1.0, abs=1e-15)


def test_split_fractions_and_slices(small_corpus):
    log = small_corpus.log
    parts = split(log, SplitSpec(mu=0.5, sigma=0.05, T=1, seed=2))
    counts = log.transaction_counts()
    assert abs(parts.fractions.mean() - 0.5) < 0.01
    assert np.array_equal(parts.train.transaction_counts(), parts.train_counts)
    for u, t, items in parts.test.cases():
        assert t == parts.train_counts[u]
        assert np.array_equal(items, log.basket(u, t))
    for u, t, _ in parts.validation.cases():
        assert t == parts.train_counts[u] - 1
        assert parts.train_core.transaction_count(u) == t
    assert np.all(parts.train_counts <= counts)
    again = split(log, SplitSpec(mu=0.5, sigma=0.05, T=1, seed=2))
    assert np.array_equal(again.fractions, parts.fractions)


def test_split_spec_domain():
    for bad in ({"mu": 0.0}, {"mu": 1.0}, {"sigma": -1.0}, {"T": 0}):
        with pytest.raises(DomainError):
            SplitSpec(**{"mu": 0.5, **bad})


def test_filter_repeats(small_tax):
    a, b, c = (int(x) for x in small_tax.leaves[:3])
    log = TransactionLog(small_tax, [[[a], [a, b]], [[c], [c]]])
    train_log = log.prefix([1, 1])
    held = HeldOut.from_cases(log, train_log, [(0, 1, [a, b]), (1, 1, [c])])
    kept = filter_repeats(held)
    assert len(kept) == 1
    assert kept.positives(0).tolist() == [b]


def _per_case_oracle(model, held, mode):
    """Leaf AUC per case from complete orderings built by the ranker."""
    out = []
    for u, t, pos in held.cases():
        seen = held.train.user_items(u)
        exclude = np.setdiff1d(seen, pos)
        hist = held.source.history(u, t, model.decay.N)
        if mode == "exhaustive":
            order = rank_exhaustive(model, u, hist, 0, exclude).nodes
        else:
            mask = np.zeros(model.taxonomy.node_count, dtype=bool)
            mask[exclude] = True
            tr = cascade(model, model.query(u, hist), mode, 0, mask if len(exclude) else None)
            order = cascade_order(model, tr, 0, mask if len(exclude) else None)
        out.append((u, auc(order, pos)))
    by_user = {}
    for u, a in out:
        by_user.setdefault(u, []).append(a)
    return float(np.mean([np.mean(v) for v in by_user.values()]))


@pytest.fixture(scope="module")
def trained(small_corpus):
    parts = split(small_corpus.log, SplitSpec(mu=0.5, seed=0))
    result = train(parts.train, config=ModelConfig(K=8, N=1, epochs=4, seed=1))
    return result.model, parts


@pytest.mark.parametrize("mode", ["exhaustive", CascadeConfig((0.5, 0.6, 0.7))])
def test_evaluate_matches_ranker(trained, mode):
    model, parts = trained
    report = evaluate(model, parts.test, mode, category_levels=False)
    assert report.mean_auc == pytest.approx(_per_case_oracle(model, parts.test, mode), abs=1e-12)


def test_threads_do_not_change_results(trained):
    model, parts = trained
    assert len(parts.test) > 256
    one = evaluate(model, parts.test, threads=1)
    four = evaluate(model, parts.test, threads=4)
    assert one.to_json() == four.to_json()


def test_category_levels(trained, small_corpus):
    model, parts = trained
    report = evaluate(model, parts.test)
    assert set(report.level_auc) == {1, 2}
    assert all(0.5 < v <= 1.0 for v in report.level_auc.values())
    flat = TFModel(model.store, model.taxonomy, 2, model.decay)
    rep = evaluate(flat, parts.test)
    assert not math.isnan(rep.level_auc[1]) and math.isnan(rep.level_auc[2])


def test_perfect_oracle_scores_one(small_tax):
    leaves = small_tax.leaves
    rng = np.random.default_rng(0)
    baskets = [[rng.choice(leaves, 2, replace=False).tolist()] for _ in range(5)]
    log = TransactionLog(small_tax, baskets)
    held = HeldOut.from_cases(log, log.prefix([0] * 5), [(u, 0, b[0]) for u, b in enumerate(baskets)])
    K = small_tax.node_count
    store = FactorStore(np.zeros((5, K)), np.eye(K), np.zeros((K, K)))
    for u, b in enumerate(baskets):
        store.user[u, b[0]] = 1.0
    model = TFModel(store, small_tax, 1, DecayWeights(0))
    report = evaluate(model, held, category_levels=False)
    assert report.mean_auc == 1.0
    assert report.mean_meanrank == 1.5


def test_untrained_model_is_near_chance(small_corpus):
    log = small_corpus.log
    core, held = holdout_last(log)
    aucs = []
    for seed in range(5):
        store = FactorStore.initialize(8, log.user_count, log.taxonomy.node_count,
                                       np.random.default_rng(seed))
        model = TFModel(store, log.taxonomy, 1, DecayWeights(0))
        aucs.append(evaluate(model, held, category_levels=False).mean_auc)
    assert abs(np.mean(aucs) - 0.5) < 0.03


def test_cold_start_rank_counts_unseen_items(small_tax):
    a, b, c = (int(x) for x in small_tax.leaves[:3])
    log = TransactionLog(small_tax, [[[a], [b, c]], [[b], [c]]])
    train_log = log.prefix([1, 1])
    held = HeldOut.from_cases(log, train_log, [(0, 1, [b, c]), (1, 1, [c])])
    model = TFModel(FactorStore.zeros(2, 2, small_tax.node_count), small_tax, 4, DecayWeights(0))
    report = evaluate(model, held, category_levels=False)
    # b was bought in training (by user 1); c is the only cold leaf, seen twice
    assert report.cold_items == 2


def test_results_csv(tmp_path, trained):
    model, parts = trained
    report = evaluate(model, parts.test)
    path = tmp_path / "results.csv"
    cfg = ModelConfig(K=8, N=1)
    append_results(path, [report.csv_row(cfg, 0.5, 4)])
    append_results(path, [report.csv_row(cfg, 0.25, 4)])
    lines = path.read_text().splitlines()
    assert lines[0].startswith("config_hash,mu,K,lambda,U,N,auc,meanrank")
    assert len(lines) == 3


def test_empty_holdout_rejected(small_log):
    empty = HeldOut.from_cases(small_log, small_log, [])
    model = TFModel(FactorStore.zeros(2, small_log.user_count, small_log.taxonomy.node_count),
                    small_log.taxonomy, 1, DecayWeights(0))
    with pytest.raises(DomainError):
        evaluate(model, empty)


def test_split_arithmetic(small_tax):
    leaves = [int(x) for x in small_tax.leaves[:4]]
    log = TransactionLog(small_tax, [[[x] for x in leaves]])
    parts = split(log, SplitSpec(mu=0.5, sigma=0.0, T=1))
    assert parts.train.transaction_count(0) == 2
    assert [(u, t) for u, t, _ in parts.validation.cases()] == [(0, 1)]
    assert [(u, t) for u, t, _ in parts.test.cases()] == [(0, 2)]


def test_user_without_test_slice(small_tax):
    leaves = [int(x) for x in small_tax.leaves[:4]]
    log = TransactionLog(small_tax, [[[x] for x in leaves], [[leaves[0]], [leaves[1]]]])
    parts = split(log, SplitSpec(mu=0.99, sigma=0.0, T=1))
    assert 1 not in parts.test.users.tolist()


def test_split_mean_over_many_users(small_tax):
    rng = np.random.default_rng(0)
    log = TransactionLog(small_tax, [[[int(small_tax.leaves[0])]] for _ in range(10_000)])
    parts = split(log, SplitSpec(mu=0.3, sigma=0.1, seed=int(rng.integers(100))))
    assert abs(parts.fractions.mean() - 0.3) < 0.01


def test_filter_repeats_examples(small_tax):
    a, b, c, d = (int(x) for x in small_tax.leaves[:4])
    log = TransactionLog(small_tax, [[[a], [c, d]], [[b], [b]], [[a], [a, b]]])
    train_log = log.prefix([1, 1, 1])
    held = HeldOut.from_cases(log, train_log, [(0, 1, [c, d]), (1, 1, [b]), (2, 1, [a, b])])
    kept = filter_repeats(held)
    assert [u for u, _, _ in kept.cases()] == [0, 2]
    assert kept.positives(0).tolist() == [c, d]
    assert kept.positives(1).tolist() == [b]


def test_metric_examples():
    assert auc([7, 8, 9, 1, 2], [7, 8]) == 1.0
    assert auc([10, 11, 12, 13, 14], [12]) == 0.5
    assert mean_rank([5, 6, 7], [5]) == 1.0
    assert mean_rank([1, 2, 3, 4, 5], [2, 4]) == 3.0


def test_null_model_single_seed(small_corpus):
    core, held = holdout_last(small_corpus.log)
    assert len(held.user_ids) >= 200
    store = FactorStore.initialize(8, small_corpus.log.user_count,
                                   small_corpus.log.taxonomy.node_count, np.random.default_rng(99))
    model = TFModel(store, small_corpus.log.taxonomy, 4, DecayWeights(0))
    assert 0.45 <= evaluate(model, held, category_levels=False).mean_auc <= 0.55
