import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from popk.corpus import Catalog, Impression, NewsArticle
from popk.metrics import (
    DegenerateImpression, EmptyRecommendations, auc_impression, category_frequencies,
    dctg_at_k, dctg_at_k_mean, evaluate, mrr, ndcg_at_k, normalized_entropy, popular_share,
    write_category_tsv,
)

from oracles import auc_pairs, entropy_direct, mrr_scan, ndcg_direct


def random_case(rng, allow_ties=True):
    n = int(rng.integers(2, 12))
    labels = np.zeros(n, dtype=int)
    labels[rng.choice(n, size=rng.integers(1, n), replace=False)] = 1
    scores = rng.integers(0, 5, size=n).astype(float) if allow_ties and rng.random() < 0.5 else rng.normal(size=n)
    return labels, scores


def test_auc_hand_cases():
    assert auc_impression([1, 0, 0], [0.9, 0.3, 0.5]) == 1.0
    assert auc_impression([1, 0, 0], [0.4, 0.5, 0.3]) == 0.5
    assert auc_impression([1, 0], [0.2, 0.2]) == 0.5
    for labels in ([1, 1], [0, 0]):
        with pytest.raises(DegenerateImpression):
            auc_impression(labels, [0.1, 0.2])


def test_auc_matches_pair_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(200):
        labels, scores = random_case(rng)
        assert auc_impression(labels, scores) == auc_pairs(labels.tolist(), scores.tolist())


def test_mrr_and_ndcg_hand_cases():
    assert mrr([1, 0, 0], [3, 2, 1]) == 1.0
    assert mrr([0, 1, 0], [3, 2, 1]) == 0.5
    assert mrr([1, 0], [1, 1]) == 1.0 and mrr([0, 1], [1, 1]) == 0.5  # stable ties
    assert abs(ndcg_at_k([1, 0, 0, 0, 0, 0], [9, 5, 4, 3, 2, 1], 5) - 1.0) < 1e-12
    assert abs(ndcg_at_k([0, 0, 1, 0, 0, 0], [9, 5, 4, 3, 2, 1], 5) - 0.5) < 1e-12
    assert ndcg_at_k([0, 0, 0, 0, 0, 1], [9, 5, 4, 3, 2, 1], 5) == 0.0
    with pytest.raises(DegenerateImpression):
        mrr([0, 0], [1, 2])
    with pytest.raises(ValueError):
        ndcg_at_k([1, 0], [1, 2], 0)


def test_mrr_ndcg_match_oracles():
    rng = np.random.default_rng(1)
    for _ in range(200):
        labels, scores = random_case(rng)
        assert mrr(labels, scores) == mrr_scan(labels.tolist(), scores.tolist())
        for k in (1, 3, 5, 10):
            assert abs(ndcg_at_k(labels, scores, k) - ndcg_direct(labels.tolist(), scores.tolist(), k)) < 1e-12


def test_dctg_edge_cases():
    assert abs(dctg_at_k([["a", "b"], ["c", "d"]], 4) - 1.0) < 1e-12
    assert dctg_at_k([["a", "a"], ["a"]], 4) == 0.0
    assert abs(dctg_at_k([["a", "b"], ["a", "b"]], 4) - 0.5) < 1e-12
    assert dctg_at_k([["a"]], 1) == 0.0
    with pytest.raises(EmptyRecommendations):
        dctg_at_k([[], []], 3)
    # pooled vs per-impression mean differ: each list is pure, the pool is mixed
    assert dctg_at_k_mean([["a", "a"], ["b", "b"]], 2) == 0.0
    assert dctg_at_k([["a", "a"], ["b", "b"]], 2) == pytest.approx(1.0)


@given(st.lists(st.integers(0, 30), min_size=2, max_size=8).filter(lambda c: sum(c) > 0))
def test_entropy_matches_direct(counts):
    n = len(counts)
    assert abs(normalized_entropy(counts, n) - entropy_direct(counts, n)) < 1e-12
    assert 0 <= normalized_entropy(counts, n) <= 1 + 1e-12


@given(st.lists(st.integers(1, 20), min_size=1, max_size=5), st.integers(6, 8))
def test_adding_unseen_category_toward_uniform(counts, n):
    # moving mass to an unseen category while no category drops below it raises entropy
    before = normalized_entropy(counts, n)
    after = normalized_entropy(counts + [min(counts)], n)
    assert after >= before - 1e-12
    assert after == pytest.approx(entropy_direct(counts + [min(counts)], n), abs=1e-12)


@settings(max_examples=100)
@given(st.integers(0, 10**6))
def test_monotone_transform_invariance_and_reversal(seed):
    rng = np.random.default_rng(seed)
    labels, _ = random_case(rng, allow_ties=False)
    scores = rng.permutation(len(labels)).astype(float) - 3.3
    warped = np.exp(scores / 4) * 7 + 2
    for f in (auc_impression, mrr):
        if f is auc_impression and labels.all():
            continue
        assert f(labels, scores) == f(labels, warped)
    assert ndcg_at_k(labels, scores, 5) == ndcg_at_k(labels, warped, 5)
    if not labels.all():
        assert auc_impression(labels, -scores) == pytest.approx(1 - auc_impression(labels, scores), abs=1e-15)


@pytest.fixture
def catalog():
    return Catalog([NewsArticle("s1", "sports"), NewsArticle("s2", "sports"),
                    NewsArticle("f1", "finance"), NewsArticle("w1", "weather")])


def test_category_frequencies(catalog, tmp_path):
    assert category_frequencies([["s1", "s2"]] * 3, catalog) == {"sports": 6}
    freq = category_frequencies([["s1", "f1", "w1"], ["f1", "s2", "f1"]], catalog)
    assert list(freq.items()) == [("finance", 3), ("sports", 2), ("weather", 1)]
    tie = category_frequencies([["s1", "f1"], ["f1", "s2"]], catalog)
    assert tie == {"finance": 2, "sports": 2} and list(tie) == ["finance", "sports"]
    write_category_tsv(freq, tmp_path / "c.tsv")
    lines = (tmp_path / "c.tsv").read_text().splitlines()
    assert lines[0] == "category\tcount\tshare" and lines[1] == "finance\t3\t0.500000"
    with pytest.raises(EmptyRecommendations):
        category_frequencies([], catalog)


def test_category_frequencies_random_recount(catalog):
    rng = np.random.default_rng(2)
    ids = list(catalog)
    recs = [list(rng.choice(ids, size=5)) for _ in range(100)]
    expected = {}
    for rec in recs:
        for a in rec:
            expected[catalog[a].category] = expected.get(catalog[a].category, 0) + 1
    assert category_frequencies(recs, catalog) == expected


def test_popular_share():
    assert popular_share([["a", "b"], ["c", "a"]], {"a"}) == 0.5
    with pytest.raises(EmptyRecommendations):
        popular_share([], {"a"})


def test_evaluate_report(catalog, tmp_path):
    imps = [
        Impression("1", "u", 0, (), (("s1", 1), ("f1", 0), ("w1", 0), ("s2", 0))),
        Impression("2", "u", 0, (), (("s1", 0), ("f1", 0), ("w1", 1), ("s2", 0))),
        Impression("3", "u", 0, (), (("s1", 0), ("f1", 0))),  # no positive: skipped
        Impression("4", "u", 0, (), (("s2", 1), ("f1", 1))),  # no negative: no AUC
    ]
    scores = [np.array([4, 3, 2, 1.0]), np.array([4, 3, 2, 1.0]), np.zeros(2), np.array([1, 0.0])]
    r = evaluate(imps, scores, catalog, ks=(2, 4))
    assert r.skipped == {"no_positive": 1, "auc_degenerate": 1}
    assert r.auc == pytest.approx((1.0 + 1 / 3) / 2)
    assert r.mrr == pytest.approx((1 + 1 / 3 + 1) / 3)
    for k, table in r.category_freq.items():
        assert sum(table.values()) == sum(min(k, len(i.candidates)) for i in imps)
    assert all(0 <= v <= 1 for v in (r.auc, r.mrr, *r.ndcg.values(), *r.dctg.values()))
    r.to_json(tmp_path / "r.json", extra={"config": {"seed": 1}})
    back = json.loads((tmp_path / "r.json").read_text())
    assert back["config"] == {"seed": 1} and back["ndcg"].keys() == {"2", "4"}
    with pytest.raises(ValueError):
        evaluate(imps, scores[:2])
