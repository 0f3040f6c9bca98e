"""News catalog and impression log parsing (MIND-style TSV)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

MAX_HISTORY = 50


class CorpusError(ValueError):
    """Base class for parse and validation errors."""


class EmptyFile(CorpusError):
    pass


class MalformedLine(CorpusError):
    def __init__(self, line_no: int, reason: str = ""):
        self.line_no = line_no
        super().__init__(f"malformed line {line_no}" + (f": {reason}" if reason else ""))


class DuplicateArticleId(CorpusError):
    def __init__(self, article_id: str):
        self.article_id = article_id
        super().__init__(f"duplicate article id {article_id!r}")


class UnknownArticleId(CorpusError):
    def __init__(self, article_id: str, line_no: int):
        self.article_id = article_id
        self.line_no = line_no
        super().__init__(f"unknown article id {article_id!r} on line {line_no}")


class BadLabel(CorpusError):
    def __init__(self, token: str):
        self.token = token
        super().__init__(f"bad candidate label in {token!r}")


class BadTimestamp(CorpusError):
    def __init__(self, token: str):
        self.token = token
        super().__init__(f"bad timestamp {token!r}")


@dataclass(frozen=True)
class NewsArticle:
    article_id: str
    category: str
    subcategory: str | None = None
    title: tuple[str, ...] = ()
    abstract: tuple[str, ...] | None = None
    entities: tuple[str, ...] = ()


@dataclass(frozen=True)
class Impression:
    impression_id: str
    user_id: str
    timestamp: int
    history: tuple[str, ...]
    candidates: tuple[tuple[str, int], ...]

    @property
    def positives(self) -> list[str]:
        return [a for a, y in self.candidates if y == 1]

    @property
    def negatives(self) -> list[str]:
        return [a for a, y in self.candidates if y == 0]

    @property
    def labels(self) -> list[int]:
        return [y for _, y in self.candidates]

    @property
    def candidate_ids(self) -> list[str]:
        return [a for a, _ in self.candidates]


class Catalog(Mapping[str, NewsArticle]):
    """Immutable mapping article_id -> NewsArticle."""

    def __init__(self, articles: Iterable[NewsArticle]):
        self._articles: dict[str, NewsArticle] = {}
        for art in articles:
            if not art.article_id:
                raise CorpusError("empty article id")
            if not art.category:
                raise CorpusError(f"article {art.article_id!r} has no category")
            if art.article_id in self._articles:
                raise DuplicateArticleId(art.article_id)
            self._articles[art.article_id] = art
        self.categories = tuple(sorted({a.category for a in self._articles.values()}))

    @property
    def category_count(self) -> int:
        return len(self.categories)

    def category_of(self, article_id: str) -> str:
        return self._articles[article_id].category

    def __getitem__(self, key: str) -> NewsArticle:
        return self._articles[key]

    def __iter__(self):
        return iter(self._articles)

    def __len__(self) -> int:
        return len(self._articles)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Catalog):
            return NotImplemented
        return list(self._articles.values()) == list(other._articles.values())

    def __repr__(self) -> str:
        return f"Catalog(n_articles={len(self)}, category_count={self.category_count})"


@dataclass(frozen=True)
class BucketSpec:
    bucket_length: int = 3600
    origin: int = 0

    def __post_init__(self):
        if self.bucket_length <= 0:
            raise ValueError("bucket_length must be positive")


def bucket_of(timestamp: float, spec: BucketSpec = BucketSpec()) -> int:
    """Index of the half-open bucket [b*L, (b+1)*L) containing ``timestamp``."""
    return math.floor((timestamp - spec.origin) / spec.bucket_length)


def truncate_history(history: Sequence[str], max_history: int = MAX_HISTORY) -> tuple[str, ...]:
    """Keep the most recent ``max_history`` clicks, in order."""
    if max_history <= 0:
        return ()
    return tuple(history[-max_history:])


# -- parsing ---------------------------------------------------------------

_MIND_TIME = "%m/%d/%Y %I:%M:%S %p"


def parse_timestamp(token: str) -> int:
    """Epoch integer, ISO-8601 or MIND clock string -> epoch seconds (UTC)."""
    token = token.strip()
    if not token:
        raise BadTimestamp(token)
    try:
        value = float(token)
    except ValueError:
        pass
    else:
        if not math.isfinite(value) or value < 0:
            raise BadTimestamp(token)
        return int(value)
    for parse in (datetime.fromisoformat, lambda s: datetime.strptime(s, _MIND_TIME)):
        try:
            dt = parse(token.replace("Z", "+00:00"))
        except ValueError:
            continue
        if dt.tzinfo is None:
            # naive clocks are taken as UTC
            dt = dt.replace(tzinfo=timezone.utc)
        ts = dt.timestamp()
        if ts < 0:
            raise BadTimestamp(token)
        return int(ts)
    raise BadTimestamp(token)


def _read_lines(path) -> list[str]:
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise EmptyFile(f"{path} is empty")
    return lines


def parse_news(path) -> Catalog:
    articles = []
    seen = set()
    for line_no, line in enumerate(_read_lines(path), start=1):
        fields = line.rstrip("\r").split("\t")
        if len(fields) < 3 or len(fields) > 6:
            raise MalformedLine(line_no, f"expected 3-6 fields, got {len(fields)}")
        fields += [""] * (6 - len(fields))
        aid, cat, subcat, title, abstract, entities = fields
        if not aid or not cat:
            raise MalformedLine(line_no, "empty id or category")
        if aid in seen:
            raise DuplicateArticleId(aid)
        seen.add(aid)
        articles.append(NewsArticle(
            article_id=aid,
            category=cat,
            subcategory=subcat or None,
            title=tuple(title.split()),
            abstract=tuple(abstract.split()) if abstract else None,
            entities=tuple(entities.split()),
        ))
    return Catalog(articles)


def _parse_candidate(token: str) -> tuple[str, int]:
    aid, sep, label = token.rpartition("-")
    if not sep or not aid or label not in ("0", "1"):
        raise BadLabel(token)
    return aid, int(label)


@dataclass
class ParseStats:
    rows: int = 0
    dropped_history: int = 0
    dropped_ids: set = field(default_factory=set)


def parse_behaviors(path, catalog: Catalog, stats: ParseStats | None = None) -> list[Impression]:
    """Parse an impression log against ``catalog``.

    Unknown ids in a history are dropped (and counted in ``stats``); unknown
    candidate ids raise UnknownArticleId.
    """
    stats = stats if stats is not None else ParseStats()
    impressions = []
    for line_no, line in enumerate(_read_lines(path), start=1):
        fields = line.rstrip("\r").split("\t")
        if len(fields) != 5:
            raise MalformedLine(line_no, f"expected 5 fields, got {len(fields)}")
        imp_id, user_id, time_tok, hist_tok, cand_tok = fields
        if not imp_id or not user_id:
            raise MalformedLine(line_no, "empty impression or user id")
        history = []
        for aid in hist_tok.split():
            if aid in catalog:
                history.append(aid)
            else:
                stats.dropped_history += 1
                stats.dropped_ids.add(aid)
        candidates = []
        for tok in cand_tok.split():
            aid, label = _parse_candidate(tok)
            if aid not in catalog:
                raise UnknownArticleId(aid, line_no)
            candidates.append((aid, label))
        if not candidates:
            raise MalformedLine(line_no, "no candidates")
        impressions.append(Impression(
            impression_id=imp_id,
            user_id=user_id,
            timestamp=parse_timestamp(time_tok),
            history=tuple(history),
            candidates=tuple(candidates),
        ))
        stats.rows += 1
    if stats.dropped_history:
        logger.warning("%s: dropped %d unknown history ids", path, stats.dropped_history)
    return impressions


# -- serialization ---------------------------------------------------------

def format_article(art: NewsArticle) -> str:
    return "\t".join([
        art.article_id,
        art.category,
        art.subcategory or "",
        " ".join(art.title),
        " ".join(art.abstract) if art.abstract else "",
        " ".join(art.entities),
    ])


def format_impression(imp: Impression) -> str:
    return "\t".join([
        imp.impression_id,
        imp.user_id,
        str(imp.timestamp),
        " ".join(imp.history),
        " ".join(f"{a}-{y}" for a, y in imp.candidates),
    ])


def write_news(catalog: Catalog, path) -> None:
    Path(path).write_text("".join(format_article(catalog[a]) + "\n" for a in catalog), encoding="utf-8")


def write_behaviors(impressions: Iterable[Impression], path) -> None:
    Path(path).write_text("".join(format_impression(i) + "\n" for i in impressions), encoding="utf-8")


def summarize(impressions: Sequence[Impression], catalog: Catalog | None = None) -> dict:
    """Counts in the "Impr./Users" style, plus date range and category histogram."""
    users = {imp.user_id for imp in impressions}
    out = {
        "impressions": len(impressions),
        "users": len(users),
        "impr_users": f"{len(impressions)} / {len(users)}",
    }
    if impressions:
        ts = [imp.timestamp for imp in impressions]
        out["first_timestamp"] = min(ts)
        out["last_timestamp"] = max(ts)
    if catalog is not None:
        hist: dict[str, int] = {}
        for aid in catalog:
            cat = catalog.category_of(aid)
            hist[cat] = hist.get(cat, 0) + 1
        out["articles"] = len(catalog)
        out["category_histogram"] = dict(sorted(hist.items()))
    return out


def split_at(impressions: Sequence[Impression], timestamp: int):
    """Partition into (before, at_or_after) ``timestamp``, preserving order."""
    before = [i for i in impressions if i.timestamp < timestamp]
    after = [i for i in impressions if i.timestamp >= timestamp]
    return before, after
