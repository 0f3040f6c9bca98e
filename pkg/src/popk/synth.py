"""Synthetic popularity-biased click logs with known user preferences."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Catalog, Impression, NewsArticle, write_behaviors, write_news, split_at


class InfeasibleConfig(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 200
    n_articles: int = 500
    n_categories: int = 10
    n_impressions: int = 20_000
    candidates_per_impression: int = 10
    popularity_exponent: float = 1.2
    preference_strength: float = 0.8
    horizon: int = 120
    seed: int = 0
    # share of impressions that get a preferred-category candidate forced in
    force_preferred_rate: float = 0.5
    # clicks before the log starts; histories stay fixed unless grow_history
    initial_history: int = 10
    grow_history: bool = False
    # held-out impressions placed after the training horizon
    n_test_impressions: int = 0
    test_candidates_per_impression: int | None = None
    test_horizon: int = 24
    start_time: int = 1_672_531_200

    def __post_init__(self):
        counts = (self.n_users, self.n_articles, self.n_categories, self.n_impressions, self.horizon)
        if min(counts) < 1:
            raise InfeasibleConfig("all counts must be >= 1")
        if self.n_categories > self.n_articles:
            raise InfeasibleConfig("n_categories must not exceed n_articles")
        for m in (self.candidates_per_impression, self.test_candidates):
            if m < 2 or m > self.n_articles:
                raise InfeasibleConfig("candidate lists need 2..n_articles entries")
        if self.popularity_exponent < 0:
            raise InfeasibleConfig("popularity_exponent must be >= 0")
        if not 0 <= self.preference_strength <= 1 or not 0 <= self.force_preferred_rate <= 1:
            raise InfeasibleConfig("probabilities must lie in [0, 1]")
        if self.n_test_impressions < 0 or self.initial_history < 0:
            raise InfeasibleConfig("counts must be non-negative")

    @property
    def test_candidates(self) -> int:
        return self.test_candidates_per_impression or self.candidates_per_impression


@dataclass
class GroundTruth:
    preferred: dict[str, str]
    popularity: dict[str, float]
    test_start: int
    extra: dict = field(default_factory=dict)

    def top_popular(self, fraction: float = 0.1) -> set[str]:
        n = max(1, int(round(len(self.popularity) * fraction)))
        ranked = sorted(self.popularity, key=lambda a: (-self.popularity[a], a))
        return set(ranked[:n])


def popularity_weights(n_articles: int, exponent: float) -> np.ndarray:
    w = np.arange(1, n_articles + 1, dtype=float) ** -exponent
    return w / w.sum()


def generate_corpus(config: SynthConfig):
    """Return ``(catalog, impressions, truth)``.

    Article ``i`` has category ``i mod n_categories``; popularity weights
    ``rank**-popularity_exponent`` are dealt to articles in a seeded random
    order. Candidate lists are drawn without replacement in proportion to
    weight. A preference-driven click picks uniformly among the user's
    preferred-category candidates; otherwise the click follows popularity.

    Histories are MIND-style: ``initial_history`` clicks made before the log,
    identical across a user's impressions unless ``grow_history`` is set.
    Training impressions lie in ``[start, start + horizon h)``; the optional
    test impressions follow, from ``truth.test_start`` on.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    A, C = cfg.n_articles, cfg.n_categories
    width = len(str(A - 1))
    ids = [f"N{i:0{width}d}" for i in range(A)]
    cats = [f"cat{i % C:02d}" for i in range(A)]
    catalog = Catalog(
        NewsArticle(ids[i], cats[i], f"sub{i % (2 * C):02d}", (f"w{i % 97}", f"w{i % 89}"), None, ())
        for i in range(A))
    # popularity rank is a seeded shuffle so the popular head is not category-balanced
    weights = popularity_weights(A, cfg.popularity_exponent)[rng.permutation(A)]
    art_cat = np.arange(A) % C
    by_cat = [np.flatnonzero(art_cat == c) for c in range(C)]

    users = [f"U{j:0{len(str(cfg.n_users - 1))}d}" for j in range(cfg.n_users)]
    pref = rng.integers(C, size=cfg.n_users)

    def weighted_pick(pool):
        p = weights[pool]
        return int(pool[rng.choice(len(pool), p=p / p.sum())])

    histories: list[list[int]] = []
    for j in range(cfg.n_users):
        h: list[int] = []
        for _ in range(cfg.initial_history):
            pool = by_cat[pref[j]] if rng.random() < cfg.preference_strength else np.arange(A)
            pool = np.setdiff1d(pool, h)
            if len(pool):
                h.append(weighted_pick(pool))
        histories.append(h)

    span = cfg.horizon * 3600
    test_start = cfg.start_time + span
    times = np.sort(cfg.start_time + rng.integers(0, span, size=cfg.n_impressions))
    test_times = np.sort(test_start + rng.integers(0, cfg.test_horizon * 3600, size=cfg.n_test_impressions))
    schedule = [(int(t), cfg.candidates_per_impression) for t in times]
    schedule += [(int(t), cfg.test_candidates) for t in test_times]

    impressions = []
    for n, (ts, m) in enumerate(schedule):
        j = int(rng.integers(cfg.n_users))
        cands = rng.choice(A, size=m, replace=False, p=weights)
        in_pref = art_cat[cands] == pref[j]
        if not in_pref.any() and rng.random() < cfg.force_preferred_rate:
            pool = np.setdiff1d(by_cat[pref[j]], cands)
            if len(pool):
                cands[rng.integers(m)] = weighted_pick(pool)
                in_pref = art_cat[cands] == pref[j]
        if in_pref.any() and rng.random() < cfg.preference_strength:
            clicked = int(rng.choice(cands[in_pref]))
        else:
            clicked = weighted_pick(cands)
        impressions.append(Impression(
            impression_id=f"I{n}",
            user_id=users[j],
            timestamp=ts,
            history=tuple(ids[a] for a in histories[j]),
            candidates=tuple((ids[a], int(a == clicked)) for a in cands),
        ))
        if cfg.grow_history:
            histories[j].append(clicked)

    truth = GroundTruth(
        preferred={u: f"cat{pref[j]:02d}" for j, u in enumerate(users)},
        popularity={ids[i]: float(weights[i]) for i in range(A)},
        test_start=test_start,
    )
    return catalog, impressions, truth


def write_corpus(out_dir, catalog: Catalog, impressions, truth: GroundTruth) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test = split_at(impressions, truth.test_start)
    paths = {"news": out / "news.tsv", "train": out / "behaviors_train.tsv",
             "ground_truth": out / "ground_truth.tsv", "popularity": out / "popularity.tsv"}
    write_news(catalog, paths["news"])
    write_behaviors(train, paths["train"])
    if test:
        paths["test"] = out / "behaviors_test.tsv"
        write_behaviors(test, paths["test"])
    paths["ground_truth"].write_text(
        "".join(f"{u}\t{c}\n" for u, c in truth.preferred.items()), encoding="utf-8")
    paths["popularity"].write_text(
        "".join(f"{a}\t{w!r}\n" for a, w in truth.popularity.items()), encoding="utf-8")
    return paths
