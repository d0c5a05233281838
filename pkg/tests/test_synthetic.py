import numpy as np
import pytest

from taxrec.data.synthetic import SynthSpec, generate_synthetic, read_ground_truth, synthesize
from taxrec.data.transactions import load_dataset
from taxrec.errors import DomainError

SMALL = dict(users=300, branching=(4, 3, 6), tx_mean=4)


def test_deterministic():
    a = synthesize(SynthSpec(**SMALL, seed=5))
    b = synthesize(SynthSpec(**SMALL, seed=5))
    c = synthesize(SynthSpec(**SMALL, seed=6))
    assert a.log == b.log
    assert not a.log == c.log


def test_shape(small_corpus):
    tax = small_corpus.taxonomy
    assert tax.depth == 3
    assert [len(ix) for ix in reversed(tax.level_index)] == [1, 4, 12, 72]
    sizes = np.diff(small_corpus.log.basket_ptr)
    assert sizes.min() >= 1 and sizes.max() <= 3
    for seq, cats in zip((small_corpus.log.baskets(u) for u in range(10)),
                         small_corpus.basket_category[:10]):
        for basket, cat in zip(seq, cats):
            assert all(tax.parent[i] == cat for i in basket)


def test_accessories_cross_top_categories(small_corpus):
    tax = small_corpus.taxonomy
    for src, dst in small_corpus.accessory.items():
        assert tax.level[src] == 1 and tax.level[dst] == 1
        assert tax.paths[src, tax.depth - 2] != tax.paths[dst, tax.depth - 2]


def _accessory_rate(corpus):
    hits = total = 0
    for cats in corpus.basket_category:
        for prev, cur in zip(cats, cats[1:]):
            total += 1
            hits += corpus.accessory[prev] == cur
    return hits / total


def test_beta_controls_accessory_transitions():
    forced = synthesize(SynthSpec(**SMALL, beta=1.0, seed=1))
    assert _accessory_rate(forced) == 1.0
    none = synthesize(SynthSpec(**SMALL, beta=0.0, seed=1))
    assert _accessory_rate(none) < 0.1


def test_cold_items_withheld_early():
    corpus = synthesize(SynthSpec(**SMALL, cold_fraction=0.1, seed=2))
    cold = set(corpus.cold.tolist())
    assert len(cold) == round(0.1 * 72)
    for u in range(corpus.log.user_count):
        n = corpus.log.transaction_count(u)
        release = int(np.floor(0.5 * n + 0.5))
        for t in range(release):
            assert not cold & set(corpus.log.basket(u, t).tolist())


def test_user_preferences_are_concentrated(small_corpus):
    pref = small_corpus.top_preference
    assert np.allclose(pref.sum(axis=1), 1.0)
    assert np.median(pref.max(axis=1)) > 0.8


def test_files(tmp_path):
    spec = SynthSpec(**SMALL, seed=3)
    tax_path, tx_path, gt_path = generate_synthetic(spec, tmp_path)
    log = load_dataset(tax_path, tx_path)
    assert log == synthesize(spec).log
    meta, users = read_ground_truth(gt_path)
    assert meta["spec"]["seed"] == 3 and len(meta["top_categories"]) == 4
    assert len(users) == 300 and len(users[0]["top_preference"]) == 4


@pytest.mark.parametrize("bad", [{"users": 0}, {"branching": (5,)}, {"branching": (3, 1)},
                                 {"beta": 1.5}, {"basket_min": 4}, {"cold_fraction": 1.0}])
def test_spec_domain(bad):
    with pytest.raises(DomainError):
        SynthSpec(**{**SMALL, **bad})


def test_same_seed_same_files(tmp_path):
    spec = SynthSpec(**SMALL, seed=8)
    first = generate_synthetic(spec, tmp_path / "a")
    second = generate_synthetic(spec, tmp_path / "b")
    for x, y in zip(first, second):
        assert x.read_bytes() == y.read_bytes()


def test_no_accessory_means_no_sequential_signal():
    # with beta = 0 baskets are exchangeable within a user: the lag-1 repeat rate of the
    # bottom category matches the rate after shuffling each user's sequence
    corpus = synthesize(SynthSpec(users=3000, branching=(4, 3, 6), tx_mean=6, beta=0.0, seed=4))
    rng = np.random.default_rng(0)

    def repeat_rate(seqs):
        hits = [a == b for s in seqs for a, b in zip(s, s[1:])]
        return np.mean(hits), len(hits)

    observed, n = repeat_rate(corpus.basket_category)
    shuffled = np.mean([repeat_rate([rng.permutation(s).tolist() for s in corpus.basket_category])[0]
                        for _ in range(20)])
    se = np.sqrt(shuffled * (1 - shuffled) / n)
    assert abs(observed - shuffled) < 4 * se
