import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from popk.corpus import Impression
from popk.popindex import (
    PopularityIndex, PopularityLogic, PopularityMetric, build_index, merge_counts, tally,
)

from oracles import HOUR, random_impressions, stat_oracle, top_oracle

LOGICS = list(PopularityLogic)
METRICS = list(PopularityMetric)


def imp(iid, t, cands, hist=()):
    return Impression(iid, "u", t, tuple(hist), tuple(cands))


def per_bucket(article, clicks_by_bucket, views=None):
    """One impression per click (and extra unclicked views) in each bucket."""
    out = []
    for b, c in enumerate(clicks_by_bucket):
        v = views[b] if views else c
        for n in range(v):
            out.append(imp(f"{article}-{b}-{n}", b * HOUR + n, [(article, int(n < c))]))
    return out


def test_single_events():
    idx = PopularityIndex().fit([imp("i", 10, [("n1", 1), ("n2", 0)])])
    assert idx.stat_value("n1", HOUR, "ptb", "clicks") == 1
    assert idx.stat_value("n2", HOUR, "ptb", "click_ratio") == 0
    cells = list(idx.iter_cells())
    assert cells == [(0, "n1", 1, 1), (0, "n2", 0, 1)]


def test_arithmetic_example():
    idx = PopularityIndex().fit(per_bucket("a", [3, 5]))
    t = 2 * HOUR
    assert idx.stat_value("a", t, "acc", "clicks") == 8
    assert idx.stat_value("a", t, "ptb", "clicks") == 5
    assert idx.stat_value("a", t, "ptb", "click_variation") == 2
    # |3-0| + |5-3|, then the drop back to zero once bucket 2 is complete
    assert idx.stat_value("a", t, "acc", "click_variation") == 5
    assert idx.stat_value("a", 3 * HOUR, "acc", "click_variation") == 10


def test_zero_views_ratio_is_zero():
    idx = PopularityIndex().fit(per_bucket("a", [1, 0, 0]) + per_bucket("b", [0, 0, 2]))
    for logic in LOGICS:
        assert idx.stat_value("a", 3 * HOUR, logic, "click_ratio") == (1.0 if logic == "acc" else 0)
    assert idx.stat_value("b", HOUR, "acc", "click_ratio") == 0
    assert idx.stat_value("zzz", HOUR, "acc", "clicks") == 0


def test_ratio_uses_views():
    idx = PopularityIndex().fit(per_bucket("a", [1, 3], views=[4, 4]))
    assert idx.stat_value("a", 2 * HOUR, "acc", "click_ratio") == 0.5
    assert idx.stat_value("a", 2 * HOUR, "ptb", "click_ratio") == 0.75


def test_only_clicked_article_qualifies():
    idx = PopularityIndex().fit([imp("i", 100, [("a1", 1), ("a2", 0), ("a3", 0)])])
    assert idx.top_popk(HOUR + 5, 3, "acc", "clicks") == ["a1"]
    assert idx.top_popk(100, 3, "acc", "clicks") == []  # same bucket: not yet visible


def test_worked_example_leaders():
    t17 = 1484611200  # 2017-01-17 00:00 UTC
    log = [imp(f"i{n}", t17 - 7200 + n, [("n19", 1), ("n70", 1), ("n125", 0)]) for n in range(3)]
    log += [imp("j", t17 - 600, [("n19", 1), ("n90", 1), ("n174", 0)])]
    idx = PopularityIndex().fit(log)
    assert idx.top_popk(t17, 2, "acc", "clicks") == ["n19", "n70"]
    assert idx.top_popk(t17, 2, "acc", "clicks", exclude={"n19"}) == ["n70", "n90"]


def test_tally_matches_full_scan():
    rng = np.random.default_rng(1)
    ids, imps = random_impressions(rng, n_impressions=2000, n_buckets=12)
    counts = tally(imps)
    expected = {}
    for i in imps:
        for a, l in i.candidates:
            c = expected.setdefault((i.timestamp // HOUR, a), [0, 0])
            c[0] += l
            c[1] += 1
    assert counts == expected
    idx = build_index(imps)
    assert {(b, a): [c, v] for b, a, c, v in idx.iter_cells()} == expected


def test_sharded_tally_merges():
    rng = np.random.default_rng(2)
    _, imps = random_impressions(rng, n_impressions=400)
    assert merge_counts(tally(imps[:150]), tally(imps[150:])) == tally(imps)


def test_event_replay_oracle():
    rng = np.random.default_rng(7)
    ids, imps = random_impressions(rng, n_impressions=300)
    idx = PopularityIndex().fit(imps)
    for _ in range(100):
        a = ids[rng.integers(len(ids))]
        t = int(rng.integers(0, 13 * HOUR))
        logic, metric = LOGICS[rng.integers(2)], METRICS[rng.integers(3)]
        assert idx.stat_value(a, t, logic, metric) == pytest.approx(
            stat_oracle(imps, a, t, logic, metric), abs=1e-12)


@pytest.mark.parametrize("logic", LOGICS)
@pytest.mark.parametrize("metric", METRICS)
def test_top_popk_full_sort_oracle(logic, metric):
    rng = np.random.default_rng(11)
    ids, imps = random_impressions(rng, n_impressions=250, click_p=0.2)
    idx = PopularityIndex().fit(imps)
    for _ in range(30):
        t = int(rng.integers(0, 12 * HOUR))
        popk = int(rng.integers(0, 6))
        exclude = set(rng.choice(ids, size=rng.integers(0, 5), replace=False))
        got = idx.top_popk(t, popk, logic, metric, exclude)
        assert got == top_oracle(imps, ids, t, popk, logic, metric, exclude)


def test_snapshot_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    ids, imps = random_impressions(rng, n_impressions=200)
    idx = PopularityIndex().fit(imps)
    idx.to_tsv(tmp_path / "s.tsv")
    back = PopularityIndex.read_tsv(tmp_path / "s.tsv")
    assert list(back.iter_cells()) == list(idx.iter_cells())
    lines = (tmp_path / "s.tsv").read_text().splitlines()[1:]
    keys = [(int(l.split("\t")[0]), l.split("\t")[1]) for l in lines]
    assert keys == sorted(keys)


def test_rejects_bad_counts_and_popk():
    with pytest.raises(ValueError):
        PopularityIndex().fit_counts({(0, "a"): (3, 2)})
    idx = PopularityIndex().fit([imp("i", 0, [("a", 1)])])
    with pytest.raises(ValueError):
        idx.top_popk(HOUR, -1, "acc", "clicks")


def test_empty_index_answers_nothing():
    idx = PopularityIndex().fit([])
    assert idx.top_popk(10 * HOUR, 3, "acc", "clicks") == []


# -- properties ---------------------------------------------------------------

events = st.lists(st.tuples(st.integers(0, 8 * HOUR), st.sampled_from(["a", "b", "c", "d"]),
                            st.integers(0, 1)), min_size=1, max_size=40)


def to_imps(evs):
    return [imp(f"e{n}", t, [(a, l)]) for n, (t, a, l) in enumerate(evs)]


@settings(max_examples=60, deadline=None)
@given(events)
def test_prefix_sum_consistency(evs):
    idx = PopularityIndex().fit(to_imps(evs))
    for a in "abcd":
        for b in range(1, 10):
            acc_now = idx.stat_value(a, (b + 1) * HOUR, "acc", "clicks")
            acc_prev = idx.stat_value(a, b * HOUR, "acc", "clicks")
            assert acc_now - acc_prev == idx.stat_value(a, (b + 1) * HOUR, "ptb", "clicks")


@settings(max_examples=60, deadline=None)
@given(events, events, st.integers(0, 9 * HOUR))
def test_temporal_causality(evs, later, t):
    base = to_imps(evs)
    extra = [imp(f"x{n}", t + dt, [(a, l)]) for n, (dt, a, l) in enumerate(later)]
    i1, i2 = PopularityIndex().fit(base), PopularityIndex().fit(base + extra)
    for logic in LOGICS:
        for metric in METRICS:
            for a in "abcd":
                assert i1.stat_value(a, t, logic, metric) == i2.stat_value(a, t, logic, metric)
            assert i1.top_popk(t, 3, logic, metric) == i2.top_popk(t, 3, logic, metric)


@settings(max_examples=60, deadline=None)
@given(events, st.integers(0, 10 * HOUR), st.integers(0, 4), st.sets(st.sampled_from("abcd")))
def test_top_popk_shape(evs, t, popk, exclude):
    idx = PopularityIndex().fit(to_imps(evs))
    for logic in LOGICS:
        for metric in METRICS:
            top = idx.top_popk(t, popk, logic, metric, exclude)
            assert len(top) <= popk and len(set(top)) == len(top)
            assert not set(top) & exclude
            keys = [(-idx.stat_value(a, t, logic, metric), a) for a in top]
            assert keys == sorted(keys)
            assert all(-k[0] > 0 for k in keys)


@settings(max_examples=60, deadline=None)
@given(events)
def test_acc_clicks_monotone(evs):
    idx = PopularityIndex().fit(to_imps(evs))
    for a in "abcd":
        vals = [idx.stat_value(a, t, "acc", "clicks") for t in range(0, 11 * HOUR, HOUR // 2)]
        assert vals == sorted(vals)
