"""Time-bucketed popularity counters and top-popk queries."""

from __future__ import annotations

from collections import defaultdict
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import BucketSpec, Impression, bucket_of


class PopularityLogic(str, Enum):
    ACC = "acc"
    PTB = "ptb"


class PopularityMetric(str, Enum):
    CLICKS = "clicks"
    CLICK_RATIO = "click_ratio"
    CLICK_VARIATION = "click_variation"


def tally(impressions: Iterable[Impression], spec: BucketSpec = BucketSpec()) -> dict:
    """Count (clicks, views) per (bucket, article_id).

    Tallies of disjoint shards can be combined with :func:`merge_counts`.
    """
    counts: dict[tuple[int, str], list[int]] = defaultdict(lambda: [0, 0])
    for imp in impressions:
        b = bucket_of(imp.timestamp, spec)
        for aid, label in imp.candidates:
            cell = counts[(b, aid)]
            cell[0] += label
            cell[1] += 1
    return dict(counts)


def merge_counts(*shards: Mapping) -> dict:
    out: dict[tuple[int, str], list[int]] = defaultdict(lambda: [0, 0])
    for shard in shards:
        for key, (c, v) in shard.items():
            out[key][0] += c
            out[key][1] += v
    return dict(out)


class PopularityIndex(BaseEstimator):
    """Per-bucket click/view counters answering "most popular at time t".

    A query at time ``t`` only reads complete buckets strictly before
    ``bucket_of(t)``; the bucket containing ``t`` is never consulted.

    Parameters
    ----------
    bucket_length : int
        Bucket width in seconds.
    origin : int
        Epoch second at which bucket 0 starts.
    """

    def __init__(self, bucket_length=3600, origin=0):
        self.bucket_length = bucket_length
        self.origin = origin

    @property
    def spec(self) -> BucketSpec:
        return BucketSpec(self.bucket_length, self.origin)

    def fit(self, impressions: Sequence[Impression], y=None):
        return self.fit_counts(tally(impressions, self.spec))

    def fit_counts(self, counts: Mapping):
        """Build the dense arrays from a ``{(bucket, article_id): (clicks, views)}`` mapping."""
        for (b, aid), (c, v) in counts.items():
            if c < 0 or v < 0 or c > v:
                raise ValueError(f"invalid counts for ({b}, {aid!r}): clicks={c}, views={v}")
        ids = sorted({aid for _, aid in counts})
        self.article_ids_ = ids
        self.article_index_ = {aid: i for i, aid in enumerate(ids)}
        if counts:
            buckets = [b for b, _ in counts]
            self.first_bucket_ = min(buckets)
            n_buckets = max(buckets) - self.first_bucket_ + 1
        else:
            self.first_bucket_ = 0
            n_buckets = 0
        clicks = np.zeros((len(ids), n_buckets), dtype=np.int64)
        views = np.zeros_like(clicks)
        for (b, aid), (c, v) in counts.items():
            i, j = self.article_index_[aid], b - self.first_bucket_
            clicks[i, j] += c
            views[i, j] += v
        self.clicks_ = clicks
        self.views_ = views
        zero = np.zeros((len(ids), 1), dtype=np.int64)
        # column j+1 holds the total over buckets <= j
        self.cum_clicks_ = np.hstack([zero, np.cumsum(clicks, axis=1)])
        self.cum_views_ = np.hstack([zero, np.cumsum(views, axis=1)])
        # |c_j - c_{j-1}| including the drop back to zero after the last bucket
        padded = np.hstack([zero, clicks, zero])
        self.cum_absdiff_ = np.hstack([zero, np.cumsum(np.abs(np.diff(padded, axis=1)), axis=1)])
        self._rank_cache = {}
        return self

    @property
    def n_buckets_(self) -> int:
        return self.clicks_.shape[1]

    def _window(self, t) -> int:
        """Column of the last complete bucket before ``t`` (may be out of range)."""
        return bucket_of(t, self.spec) - 1 - self.first_bucket_

    def _bucket_col(self, arr, j):
        if 0 <= j < arr.shape[1]:
            return arr[:, j]
        return np.zeros(arr.shape[0], dtype=arr.dtype)

    def stat_values(self, t, logic, metric) -> np.ndarray:
        """stat_value for every indexed article, aligned with ``article_ids_``."""
        check_is_fitted(self, "clicks_")
        logic, metric = PopularityLogic(logic), PopularityMetric(metric)
        j = self._window(t)
        n = len(self.article_ids_)
        if n == 0:
            return np.zeros(0)
        B = self.n_buckets_
        if logic is PopularityLogic.ACC:
            upto = min(max(j + 1, 0), B)
            if metric is PopularityMetric.CLICKS:
                return self.cum_clicks_[:, upto].astype(float)
            if metric is PopularityMetric.CLICK_RATIO:
                return _ratio(self.cum_clicks_[:, upto], self.cum_views_[:, upto])
            upto = min(max(j + 1, 0), B + 1)
            return self.cum_absdiff_[:, upto].astype(float)
        cur = self._bucket_col(self.clicks_, j)
        if metric is PopularityMetric.CLICKS:
            return cur.astype(float)
        if metric is PopularityMetric.CLICK_RATIO:
            return _ratio(cur, self._bucket_col(self.views_, j))
        return (cur - self._bucket_col(self.clicks_, j - 1)).astype(float)

    def stat_value(self, article: str, t, logic, metric) -> float:
        i = self.article_index_.get(article)
        if i is None:
            return 0.0
        return float(self.stat_values(t, logic, metric)[i])

    def ranking(self, t, logic, metric) -> tuple[str, ...]:
        """All articles with positive stat_value, by (value desc, article_id asc)."""
        check_is_fitted(self, "clicks_")
        logic, metric = PopularityLogic(logic), PopularityMetric(metric)
        key = (bucket_of(t, self.spec), logic, metric)
        hit = self._rank_cache.get(key)
        if hit is None:
            vals = self.stat_values(t, logic, metric)
            order = np.lexsort((np.arange(len(vals)), -vals))
            order = order[vals[order] > 0]
            hit = tuple(self.article_ids_[i] for i in order)
            self._rank_cache[key] = hit
        return hit

    def top_popk(self, t, popk: int, logic, metric, exclude=()) -> list[str]:
        if popk < 0:
            raise ValueError("popk must be >= 0")
        out: list[str] = []
        if popk == 0:
            return out
        exclude = set(exclude)
        for aid in self.ranking(t, logic, metric):
            if aid in exclude:
                continue
            out.append(aid)
            if len(out) == popk:
                break
        return out

    def iter_cells(self):
        """(bucket, article_id, clicks, views) for every cell with views, bucket asc then article asc."""
        check_is_fitted(self, "clicks_")
        for j in range(self.n_buckets_):
            for i in np.flatnonzero(self.views_[:, j]):
                yield (j + self.first_bucket_, self.article_ids_[i],
                       int(self.clicks_[i, j]), int(self.views_[i, j]))

    def to_tsv(self, path) -> None:
        rows = [f"{b}\t{a}\t{c}\t{v}\n" for b, a, c, v in self.iter_cells()]
        Path(path).write_text("bucket\tarticle_id\tclicks\tviews\n" + "".join(rows), encoding="utf-8")

    @classmethod
    def read_tsv(cls, path, bucket_length=3600, origin=0) -> "PopularityIndex":
        counts = {}
        with open(path, encoding="utf-8") as fh:
            header = fh.readline()
            if header.rstrip("\n").split("\t") != ["bucket", "article_id", "clicks", "views"]:
                raise ValueError(f"{path}: not a bucket stats snapshot")
            for line in fh:
                b, aid, c, v = line.rstrip("\n").split("\t")
                counts[(int(b), aid)] = (int(c), int(v))
        return cls(bucket_length=bucket_length, origin=origin).fit_counts(counts)


def _ratio(clicks, views) -> np.ndarray:
    out = np.zeros(len(clicks))
    np.divide(clicks, views, out=out, where=views > 0)
    return out


# functional aliases

def build_index(impressions: Sequence[Impression], spec: BucketSpec = BucketSpec()) -> PopularityIndex:
    return PopularityIndex(spec.bucket_length, spec.origin).fit(impressions)


def stat_value(index: PopularityIndex, article: str, t, logic, metric) -> float:
    return index.stat_value(article, t, logic, metric)


def top_popk(index: PopularityIndex, t, popk: int, logic, metric, exclude=()) -> list[str]:
    return index.top_popk(t, popk, logic, metric, exclude)
