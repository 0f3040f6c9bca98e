"""Negative sampling with popular-article substitution."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import Impression
from .popindex import PopularityIndex, PopularityLogic, PopularityMetric

logger = logging.getLogger(__name__)


class Provenance(IntEnum):
    FROM_IMPRESSION = 0
    FROM_POPK = 1


@dataclass(frozen=True)
class SamplerConfig:
    k: int = 4
    popk: int = 0
    logic: PopularityLogic = PopularityLogic.ACC
    metric: PopularityMetric = PopularityMetric.CLICKS
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 <= self.popk <= self.k:
            raise ValueError("popk must satisfy 0 <= popk <= k")
        object.__setattr__(self, "logic", PopularityLogic(self.logic))
        object.__setattr__(self, "metric", PopularityMetric(self.metric))

    @property
    def k_prime(self) -> int:
        return self.k - self.popk


@dataclass(frozen=True)
class TrainingSample:
    impression_id: str
    positive: str
    negatives: tuple[str, ...]
    provenance: tuple[Provenance, ...]
    timestamp: int
    history: tuple[str, ...]

    @property
    def n_popular(self) -> int:
        return sum(p == Provenance.FROM_POPK for p in self.provenance)


@dataclass
class SkipCounter:
    no_positive: int = 0
    no_negatives: int = 0
    popularity_shortfall: int = 0
    skipped_ids: list = field(default_factory=list)


def impression_rng(seed: int, impression_id: str, epoch: int = 0) -> np.random.Generator:
    """Per-impression stream so serial and parallel runs draw identically."""
    key = zlib.crc32(impression_id.encode("utf-8"))
    return np.random.default_rng([seed, epoch, key])


def make_samples(impression: Impression, index: PopularityIndex | None, config: SamplerConfig,
                 rng: np.random.Generator, skips: SkipCounter | None = None) -> list[TrainingSample]:
    """One TrainingSample per clicked candidate of ``impression``.

    Draws k negatives from the impression (with replacement only when it has
    fewer than k usable ones), then overwrites up to popk randomly chosen slots
    with the most popular articles at the impression time. A popular article
    already drawn keeps its slot and counts as a substitution.
    """
    positives = impression.positives
    history = set(impression.history)
    if not positives:
        if skips is not None:
            skips.no_positive += 1
            skips.skipped_ids.append(impression.impression_id)
        return []
    k, popk = config.k, config.popk
    samples = []
    for pos in positives:
        pool = list(dict.fromkeys(
            a for a in impression.negatives if a != pos and a not in history))
        if not pool:
            if skips is not None:
                skips.no_negatives += 1
                skips.skipped_ids.append(impression.impression_id)
            return []
        replace = len(pool) < k
        drawn = [pool[i] for i in rng.choice(len(pool), size=k, replace=replace)]
        prov = [Provenance.FROM_IMPRESSION] * k

        popular = []
        if popk and index is not None:
            popular = index.top_popk(impression.timestamp, popk, config.logic, config.metric,
                                     exclude=history | {pos})
        if len(popular) < popk and skips is not None:
            skips.popularity_shortfall += 1
        fresh = []
        for art in popular:
            if art in drawn:
                prov[drawn.index(art)] = Provenance.FROM_POPK
            else:
                fresh.append(art)
        if fresh:
            open_slots = [i for i in range(k) if prov[i] == Provenance.FROM_IMPRESSION]
            slots = rng.choice(open_slots, size=len(fresh), replace=False)
            for slot, art in zip(slots, fresh):
                drawn[slot] = art
                prov[slot] = Provenance.FROM_POPK
        samples.append(TrainingSample(
            impression_id=impression.impression_id,
            positive=pos,
            negatives=tuple(drawn),
            provenance=tuple(prov),
            timestamp=impression.timestamp,
            history=impression.history,
        ))
    return samples


def validate_sample(sample: TrainingSample, config: SamplerConfig, index: PopularityIndex | None = None,
                    impression: Impression | None = None) -> list[str]:
    """Return every invariant the sample violates (empty when valid)."""
    errors = []
    if len(sample.negatives) != config.k:
        errors.append(f"expected {config.k} negatives, got {len(sample.negatives)}")
    if len(sample.provenance) != len(sample.negatives):
        errors.append("provenance length mismatch")
    n_pop = sample.n_popular
    if n_pop > config.popk:
        errors.append(f"{n_pop} popular negatives > popk={config.popk}")
    if sample.positive in sample.negatives:
        errors.append("positive among negatives")
    if set(sample.negatives) & set(sample.history):
        errors.append("negative in user history")
    if len(set(sample.negatives)) != len(sample.negatives):
        errors.append("duplicate negatives")
    if index is not None:
        allowed = set(index.top_popk(sample.timestamp, config.popk, config.logic, config.metric,
                                     exclude=set(sample.history) | {sample.positive}))
        for art, p in zip(sample.negatives, sample.provenance):
            if p == Provenance.FROM_POPK and art not in allowed:
                errors.append(f"{art} flagged popular but not in top_popk")
    if impression is not None:
        imp_negs = set(impression.negatives)
        for art, p in zip(sample.negatives, sample.provenance):
            if p == Provenance.FROM_IMPRESSION and art not in imp_negs:
                errors.append(f"{art} flagged from impression but not an impression negative")
    return errors


class PopkSampler(BaseEstimator, TransformerMixin):
    """Turn impressions into POPK training samples.

    ``fit`` builds the popularity index from the training log (unless one is
    passed in); ``transform`` emits samples for a given epoch. ``popk=0``
    gives the plain impression-negative sampler.
    """

    def __init__(self, k=4, popk=0, logic="acc", metric="clicks", seed=0,
                 bucket_length=3600, index=None):
        self.k = k
        self.popk = popk
        self.logic = logic
        self.metric = metric
        self.seed = seed
        self.bucket_length = bucket_length
        self.index = index

    @property
    def config(self) -> SamplerConfig:
        return SamplerConfig(self.k, self.popk, self.logic, self.metric, self.seed)

    def fit(self, impressions: Sequence[Impression], y=None):
        self.config  # validates params
        if self.index is not None:
            self.index_ = self.index
        else:
            self.index_ = PopularityIndex(bucket_length=self.bucket_length).fit(impressions)
        return self

    def transform(self, impressions: Iterable[Impression], epoch: int = 0) -> list[TrainingSample]:
        cfg = self.config
        index = getattr(self, "index_", self.index)
        if cfg.popk and index is None:
            raise ValueError("popk > 0 needs a fitted popularity index; call fit first")
        self.skips_ = SkipCounter()
        out = []
        for imp in impressions:
            rng = impression_rng(cfg.seed, imp.impression_id, epoch)
            out.extend(make_samples(imp, index, cfg, rng, self.skips_))
        if self.skips_.no_positive or self.skips_.no_negatives:
            logger.info("skipped impressions: %d without positives, %d without negatives",
                        self.skips_.no_positive, self.skips_.no_negatives)
        return out


def write_samples(samples: Iterable[TrainingSample], path) -> None:
    lines = []
    for s in samples:
        flags = "".join("P" if p == Provenance.FROM_POPK else "I" for p in s.provenance)
        lines.append("\t".join([s.impression_id, s.positive, *s.negatives, flags]) + "\n")
    Path(path).write_text("".join(lines), encoding="utf-8")
