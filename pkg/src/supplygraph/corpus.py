"""News corpus loading, article fetching, and text/name normalization.

Articles are JSON Lines records with a fixed field set. Entity names are
normalized to a lowercase matching form; article bodies are normalized to
lowercase single-spaced text before they are handed to a prompt.
"""

from __future__ import annotations

import json
import logging
import string
import re
import time
from collections import Counter
from dataclasses import dataclass, replace
from importlib import resources
from typing import TYPE_CHECKING, Iterator, Protocol

from .errors import DuplicateId, EmptyName, FetchError, ParseError

if TYPE_CHECKING:
    from .crawler import CrawlConfig

log = logging.getLogger(__name__)

ARTICLE_FIELDS = ("id", "url", "title", "body", "published_year", "retrieved_for_keyword")

_WS_RE = re.compile(r"\s+")
_CONTROL_RE = re.compile(r"[\x00-\x08\x0b-\x1f\x7f]")
_EDGE_CHARS = string.punctuation + string.whitespace


@dataclass(frozen=True)
class Article:
    """One fetched news item."""

    id: str
    url: str
    title: str
    body: str
    published_year: int
    retrieved_for_keyword: str


@dataclass(frozen=True)
class StopwordLists:
    """Corporate-suffix tokens and general stopwords, loaded from separate files.

    Suffix tokens participate in name normalization. General stopwords are
    used only for corpus statistics and never touch prompt payloads.
    """

    company_suffixes: frozenset[str]
    general_stopwords: frozenset[str]

    @classmethod
    def default(cls) -> "StopwordLists":
        data = resources.files("supplygraph").joinpath("data")
        return cls(
            company_suffixes=_parse_stopword_text(
                data.joinpath("company_suffixes.txt").read_text(encoding="utf-8")
            ),
            general_stopwords=_parse_stopword_text(
                data.joinpath("general_stopwords.txt").read_text(encoding="utf-8")
            ),
        )


def _parse_stopword_text(text: str) -> frozenset[str]:
    tokens = set()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tokens.add(line.lower())
    return frozenset(tokens)


def load_stopwords(suffix_path: str, general_path: str) -> StopwordLists:
    """Load the two stopword lists from their files (one token per line, # comments)."""
    with open(suffix_path, encoding="utf-8") as fh:
        suffixes = _parse_stopword_text(fh.read())
    with open(general_path, encoding="utf-8") as fh:
        general = _parse_stopword_text(fh.read())
    return StopwordLists(company_suffixes=suffixes, general_stopwords=general)


def normalize_name(raw: str, stopwords: StopwordLists | None = None) -> str:
    """Normalize an entity name to its lowercase matching form.

    Lowercases, trims edge punctuation and whitespace, collapses internal
    whitespace runs, and, when ``stopwords`` is given, repeatedly drops
    trailing corporate-suffix tokens (right to left). Tokens inside the name
    are never removed. Raises EmptyName when nothing survives.
    """
    if not raw or not raw.strip():
        raise EmptyName("name is empty")
    name = _WS_RE.sub(" ", raw.lower()).strip(_EDGE_CHARS)
    suffixes = stopwords.company_suffixes if stopwords is not None else frozenset()
    while name:
        tokens = name.split(" ")
        if tokens[-1] not in suffixes:
            break
        name = " ".join(tokens[:-1]).strip(_EDGE_CHARS)
    if not name:
        raise EmptyName(f"nothing left of {raw!r} after suffix stripping")
    return name


def preprocess_text(body: str) -> str:
    """Lowercase text, drop control characters, and collapse whitespace runs.

    Sentence punctuation is left in place, so sentence boundaries survive.
    """
    if not body:
        return ""
    text = _CONTROL_RE.sub(" ", body.lower())
    return _WS_RE.sub(" ", text).strip()


def token_frequencies(text: str, stopwords: StopwordLists) -> Counter:
    """Count content tokens in preprocessed text, excluding general stopwords.

    A statistics helper only; prompt payloads keep every word.
    """
    counts: Counter = Counter()
    for token in preprocess_text(text).split(" "):
        token = token.strip(_EDGE_CHARS)
        if token and token not in stopwords.general_stopwords:
            counts[token] += 1
    return counts


class Corpus:
    """An ordered, immutable-after-load collection of articles.

    Keeps a keyword index mapping retrieved_for_keyword values to article ids
    in insertion order.
    """

    def __init__(self) -> None:
        self.articles: list[Article] = []
        self.keyword_index: dict[str, list[str]] = {}
        self._by_id: dict[str, Article] = {}

    def add(self, article: Article) -> None:
        if article.id in self._by_id:
            raise DuplicateId(article.id)
        self.articles.append(article)
        self._by_id[article.id] = article
        self.keyword_index.setdefault(article.retrieved_for_keyword, []).append(article.id)

    def get(self, article_id: str) -> Article:
        return self._by_id[article_id]

    def for_keyword(self, keyword: str) -> list[Article]:
        return [self._by_id[aid] for aid in self.keyword_index.get(keyword, [])]

    def __len__(self) -> int:
        return len(self.articles)

    def __iter__(self) -> Iterator[Article]:
        return iter(self.articles)


def _article_from_record(record: object, strict: bool, path: str, lineno: int) -> Article:
    if not isinstance(record, dict):
        raise ParseError("article record is not an object", path=path, line=lineno)
    missing = [f for f in ARTICLE_FIELDS if f not in record]
    if missing:
        raise ParseError(f"missing fields {missing}", path=path, line=lineno)
    unknown = [k for k in record if k not in ARTICLE_FIELDS]
    if unknown and strict:
        raise ParseError(f"unknown fields {unknown}", path=path, line=lineno)
    for f in ("id", "url", "title", "body", "retrieved_for_keyword"):
        if not isinstance(record[f], str):
            raise ParseError(f"field {f!r} must be a string", path=path, line=lineno)
    year = record["published_year"]
    if isinstance(year, bool) or not isinstance(year, int):
        raise ParseError("field 'published_year' must be an integer", path=path, line=lineno)
    if not record["id"]:
        raise ParseError("field 'id' must be non-empty", path=path, line=lineno)
    if not preprocess_text(record["body"]):
        raise ParseError("article body is empty after preprocessing", path=path, line=lineno)
    return Article(
        id=record["id"],
        url=record["url"],
        title=record["title"],
        body=record["body"],
        published_year=year,
        retrieved_for_keyword=record["retrieved_for_keyword"],
    )


def load_corpus(path: str, strict: bool = True) -> Corpus:
    """Load a JSONL corpus file.

    Every record must carry exactly the article fields; unknown fields are
    rejected in strict mode and ignored otherwise. Raises ParseError with the
    offending line number, or DuplicateId on a repeated article id.
    """
    corpus = Corpus()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad JSON: {exc.msg}", path=str(path), line=lineno) from exc
            corpus.add(_article_from_record(record, strict, str(path), lineno))
    return corpus


def dump_corpus(corpus: Corpus, path: str) -> None:
    """Write a corpus as JSONL with the canonical field order.

    Loading a file produced here and dumping it again is byte-identical.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for article in corpus:
            record = {f: getattr(article, f) for f in ARTICLE_FIELDS}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


class ArticleFetcher(Protocol):
    """Source of articles for one keyword and one year."""

    def search(self, keyword: str, year: int, limit: int) -> list[Article]: ...


class CorpusFetcher:
    """Fetcher backed by a local corpus; filters by keyword and year."""

    def __init__(self, corpus: Corpus):
        self.corpus = corpus

    def search(self, keyword: str, year: int, limit: int) -> list[Article]:
        hits = [a for a in self.corpus.for_keyword(keyword) if a.published_year == year]
        return hits[:limit]


def _search_with_retries(
    fetcher: ArticleFetcher,
    keyword: str,
    year: int,
    limit: int,
    retries: int,
    backoff_s: float,
) -> list[Article]:
    last: Exception | None = None
    for attempt in range(retries + 1):
        try:
            return fetcher.search(keyword, year, limit)
        except FetchError as exc:
            last = exc
            if attempt < retries and backoff_s > 0:
                time.sleep(backoff_s * (attempt + 1))
    raise FetchError(f"search failed for keyword={keyword!r} year={year}: {last}")


def fetch_articles(
    keyword: str,
    config: "CrawlConfig",
    fetcher: ArticleFetcher,
    retries: int = 2,
    backoff_s: float = 0.1,
) -> list[Article]:
    """Fetch up to config.per_year_min articles per year across config.year_range.

    Shortfalls are logged, not raised; a source failure surfaces as FetchError
    after retries. Every returned article is tagged with the keyword and has a
    published_year inside the configured range.
    """
    if not keyword or not keyword.strip():
        raise ValueError("keyword must be non-empty")
    start, end = config.year_range
    out: list[Article] = []
    for year in range(start, end + 1):
        hits = _search_with_retries(fetcher, keyword, year, config.per_year_min, retries, backoff_s)
        hits = [a for a in hits if start <= a.published_year <= end][: config.per_year_min]
        if len(hits) < config.per_year_min:
            log.warning(
                "fetch shortfall keyword=%s year=%d got=%d want=%d",
                keyword, year, len(hits), config.per_year_min,
            )
        out.extend(replace(a, retrieved_for_keyword=keyword) for a in hits)
    return out
