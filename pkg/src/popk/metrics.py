"""Ranking accuracy and category-diversity metrics."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .corpus import Catalog, Impression


class DegenerateImpression(ValueError):
    """Labels lack a positive (or, for AUC, a negative); the impression is skipped."""


class EmptyRecommendations(ValueError):
    pass


def _check(labels, scores):
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise ValueError("labels and scores must be 1-d and the same length")
    if not labels.any():
        raise DegenerateImpression("no positive label")
    return labels, scores


def ranking(scores) -> np.ndarray:
    """Indices by score descending; ties keep input order."""
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")


def auc_impression(labels, scores) -> float:
    """P(random positive outranks random negative), ties counted as 1/2."""
    labels, scores = _check(labels, scores)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_neg == 0:
        raise DegenerateImpression("no negative label")
    ranks = rankdata(scores)  # midranks give the 1/2 tie credit
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def mrr(labels, scores) -> float:
    labels, scores = _check(labels, scores)
    first = np.flatnonzero(labels[ranking(scores)])[0]
    return 1.0 / (first + 1)


def dcg_at_k(labels, scores, k) -> float:
    gains = np.asarray(labels, dtype=float)[ranking(scores)[:k]]
    return float((gains / np.log2(np.arange(2, len(gains) + 2))).sum())


def ndcg_at_k(labels, scores, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    labels, scores = _check(labels, scores)
    return dcg_at_k(labels, scores, k) / dcg_at_k(labels, labels, k)


def normalized_entropy(counts: Iterable[int], n_categories: int) -> float:
    counts = np.asarray([c for c in counts if c > 0], dtype=float)
    if counts.sum() == 0:
        raise EmptyRecommendations("no recommended slots")
    if n_categories < 2:
        return 0.0
    p = counts / counts.sum()
    return float((0.0 - (p * np.log(p)).sum()) / math.log(n_categories))


def dctg_at_k(topk_categories: Iterable[Sequence[str]], n_categories: int) -> float:
    """Normalized entropy of the category distribution pooled over all top-k lists."""
    pooled = Counter(c for cats in topk_categories for c in cats)
    return normalized_entropy(pooled.values(), n_categories)


def dctg_at_k_mean(topk_categories: Iterable[Sequence[str]], n_categories: int) -> float:
    """Per-impression normalized entropy, averaged."""
    vals = [normalized_entropy(Counter(cats).values(), n_categories) for cats in topk_categories if cats]
    if not vals:
        raise EmptyRecommendations("no recommended slots")
    return float(np.mean(vals))


def category_frequencies(recommendations: Iterable[Sequence[str]], catalog: Catalog) -> dict[str, int]:
    """Category -> number of recommended slots, ordered by count desc then name."""
    counts = Counter(catalog.category_of(a) for rec in recommendations for a in rec)
    if not counts:
        raise EmptyRecommendations("no recommendations")
    return dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))


def write_category_tsv(freq: Mapping[str, int], path) -> None:
    total = sum(freq.values())
    rows = [f"{c}\t{n}\t{n / total:.6f}\n" for c, n in freq.items()]
    Path(path).write_text("category\tcount\tshare\n" + "".join(rows), encoding="utf-8")


def popular_share(recommendations: Iterable[Sequence[str]], popular: set) -> float:
    """Fraction of recommended slots occupied by articles in ``popular``."""
    total = hits = 0
    for rec in recommendations:
        total += len(rec)
        hits += sum(a in popular for a in rec)
    if total == 0:
        raise EmptyRecommendations("no recommendations")
    return hits / total


@dataclass
class EvalReport:
    auc: float
    mrr: float
    ndcg: dict[int, float]
    dctg: dict[int, float] = field(default_factory=dict)
    dctg_mean: dict[int, float] = field(default_factory=dict)
    category_freq: dict[int, dict[str, int]] = field(default_factory=dict)
    n_impressions: int = 0
    skipped: dict[str, int] = field(default_factory=dict)

    @property
    def ndcg5(self):
        return self.ndcg.get(5)

    @property
    def ndcg10(self):
        return self.ndcg.get(10)

    @property
    def dctg5(self):
        return self.dctg.get(5)

    @property
    def dctg10(self):
        return self.dctg.get(10)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("ndcg", "dctg", "dctg_mean", "category_freq"):
            d[key] = {str(k): v for k, v in d[key].items()}
        return d

    def to_json(self, path, extra: Mapping | None = None) -> None:
        record = self.to_dict()
        if extra:
            record.update(extra)
        Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def top_k_lists(impressions: Sequence[Impression], scores: Sequence[np.ndarray], k: int) -> list[list[str]]:
    return [[imp.candidates[i][0] for i in ranking(s)[:k]] for imp, s in zip(impressions, scores)]


def evaluate(impressions: Sequence[Impression], scores: Sequence[np.ndarray],
             catalog: Catalog | None = None, ks: Sequence[int] = (5, 10)) -> EvalReport:
    """Mean AUC/MRR/nDCG@k over non-degenerate impressions, plus pooled D_ctg@k."""
    if len(impressions) != len(scores):
        raise ValueError("one score vector per impression is required")
    aucs, mrrs = [], []
    ndcgs = {k: [] for k in ks}
    skipped = {"no_positive": 0, "auc_degenerate": 0}
    for imp, s in zip(impressions, scores):
        labels = imp.labels
        try:
            mrrs.append(mrr(labels, s))
        except DegenerateImpression:
            skipped["no_positive"] += 1
            continue
        for k in ks:
            ndcgs[k].append(ndcg_at_k(labels, s, k))
        try:
            aucs.append(auc_impression(labels, s))
        except DegenerateImpression:
            skipped["auc_degenerate"] += 1
    report = EvalReport(
        auc=float(np.mean(aucs)) if aucs else float("nan"),
        mrr=float(np.mean(mrrs)) if mrrs else float("nan"),
        ndcg={k: float(np.mean(v)) if v else float("nan") for k, v in ndcgs.items()},
        n_impressions=len(impressions),
        skipped=skipped,
    )
    if catalog is not None and impressions:
        for k in ks:
            recs = top_k_lists(impressions, scores, k)
            cats = [[catalog.category_of(a) for a in rec] for rec in recs]
            report.dctg[k] = dctg_at_k(cats, catalog.category_count)
            report.dctg_mean[k] = dctg_at_k_mean(cats, catalog.category_count)
            report.category_freq[k] = category_frequencies(recs, catalog)
    return report
