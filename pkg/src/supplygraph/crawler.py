"""Iterative crawl loop: keyword frontier, extraction prompts, graph growth.

Each keyword popped from the frontier fetches its articles, runs the
extraction prompt over every (segmented) article, upserts the parsed
entities, records clique co-mention edges, and enqueues unseen entities as
new keywords. Per-article failures are tallied and skipped, never fatal.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Union

from .backends import Backend, BackendRequest
from .corpus import (
    ArticleFetcher,
    Corpus,
    CorpusFetcher,
    fetch_articles,
    preprocess_text,
)
from .errors import (
    BackendUnavailable,
    EmptyName,
    EmptyParse,
    FetchError,
    OversizeAtom,
    ReplayMiss,
    ScriptMiss,
)
from .graph import SupplyChainGraph
from .prompting import (
    ExtractedEntity,
    ParseDiagnostics,
    build_extraction_prompt,
    parse_entity_list,
    segment_text,
)

log = logging.getLogger(__name__)

TERMINATION_EXHAUSTED = "exhausted"
TERMINATION_NODE_BUDGET = "node budget"
TERMINATION_ARTICLE_BUDGET = "article budget"


@dataclass
class CrawlConfig:
    seeds: list[str]
    industry: str = "civil engineering"
    year_range: tuple[int, int] = (2018, 2023)
    per_year_min: int = 10
    token_budget: int = 3000
    max_nodes: int = 100000
    max_articles: int = 1000000
    deterministic: bool = True
    parallelism: int = 1

    def __post_init__(self) -> None:
        if not self.seeds or not all(s.strip() for s in self.seeds):
            raise ValueError("seeds must be a non-empty list of non-empty names")
        if not self.industry.strip():
            raise ValueError("industry must be non-empty")
        start, end = self.year_range
        if start > end:
            raise ValueError("year_range start must not exceed end")
        if self.per_year_min < 1:
            raise ValueError("per_year_min must be >= 1")
        if self.token_budget < 1:
            raise ValueError("token_budget must be >= 1")
        if self.max_nodes < 1 or self.max_articles < 1:
            raise ValueError("budgets must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["year_range"] = list(self.year_range)
        return data


@dataclass
class CrawlStats:
    articles_processed: int = 0
    entities_extracted: int = 0
    nodes_created: int = 0
    edges_created: int = 0
    parse_failures: int = 0
    backend_failures: int = 0
    fetch_failures: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CrawlState:
    frontier: deque = field(default_factory=deque)
    visited: set = field(default_factory=set)
    ever_enqueued: set = field(default_factory=set)
    stats: CrawlStats = field(default_factory=CrawlStats)


@dataclass
class CrawlReport:
    termination_reason: str
    stats: CrawlStats
    duration_ms: int
    config: CrawlConfig

    def to_dict(self) -> dict:
        return {
            "termination_reason": self.termination_reason,
            "stats": self.stats.to_dict(),
            "duration_ms": self.duration_ms,
            "config": self.config.to_dict(),
        }


def should_terminate(
    state: CrawlState, config: CrawlConfig, graph: SupplyChainGraph
) -> tuple[bool, str | None]:
    """Decide whether the crawl is done and why."""
    if not state.frontier:
        return True, TERMINATION_EXHAUSTED
    if len(graph.nodes) >= config.max_nodes:
        return True, TERMINATION_NODE_BUDGET
    if state.stats.articles_processed >= config.max_articles:
        return True, TERMINATION_ARTICLE_BUDGET
    return False, None


def article_payload(title: str, body: str) -> str:
    """Prompt payload for one article: preprocessed title and body."""
    parts = [preprocess_text(title), preprocess_text(body)]
    return "\n\n".join(p for p in parts if p)


@dataclass
class _ArticleResult:
    article_id: str
    entities: list[ExtractedEntity]
    parse_failures: int
    backend_failures: int


@dataclass
class _Harvest:
    keyword: str
    articles: list[_ArticleResult] = field(default_factory=list)
    fetch_failed: bool = False


class Crawler:
    def __init__(
        self,
        config: CrawlConfig,
        source: Union[Corpus, ArticleFetcher],
        backend: Backend,
        graph: SupplyChainGraph | None = None,
    ):
        self.config = config
        self.fetcher = CorpusFetcher(source) if isinstance(source, Corpus) else source
        self.backend = backend
        self.graph = graph if graph is not None else SupplyChainGraph()
        self.diagnostics = ParseDiagnostics()

    def run(self) -> tuple[SupplyChainGraph, CrawlReport]:
        started = time.monotonic()
        state = CrawlState()
        for raw_seed in self.config.seeds:
            cid = self.graph.upsert_entity(raw_seed)
            if cid not in state.ever_enqueued:
                state.frontier.append(cid)
                state.ever_enqueued.add(cid)
        while True:
            done, reason = should_terminate(state, self.config, self.graph)
            if done:
                break
            width = 1
            if not self.config.deterministic and self.config.parallelism > 1:
                width = min(self.config.parallelism, len(state.frontier))
            batch = [state.frontier.popleft() for _ in range(width)]
            if width == 1:
                harvests = [self._harvest(batch[0])]
            else:
                with ThreadPoolExecutor(max_workers=width) as pool:
                    harvests = list(pool.map(self._harvest, batch))
            for harvest in harvests:
                self._apply(state, harvest)
        duration_ms = int((time.monotonic() - started) * 1000)
        report = CrawlReport(
            termination_reason=reason or TERMINATION_EXHAUSTED,
            stats=state.stats,
            duration_ms=duration_ms,
            config=self.config,
        )
        return self.graph, report

    def _harvest(self, keyword: str) -> _Harvest:
        harvest = _Harvest(keyword=keyword)
        try:
            articles = fetch_articles(keyword, self.config, self.fetcher)
        except FetchError as exc:
            log.warning("fetch failed keyword=%s error=%s", keyword, exc)
            harvest.fetch_failed = True
            return harvest
        for article in articles:
            harvest.articles.append(self._extract(article.id, article.title, article.body))
        return harvest

    def _extract(self, article_id: str, title: str, body: str) -> _ArticleResult:
        payload = article_payload(title, body)
        entities: list[ExtractedEntity] = []
        parse_failures = 0
        backend_failures = 0
        try:
            plan = segment_text(payload, self.config.token_budget)
        except OversizeAtom as exc:
            log.warning("segmentation failed article=%s error=%s", article_id, exc)
            return _ArticleResult(article_id, [], 1, 0)
        for i, segment in enumerate(plan.segments):
            request = BackendRequest(
                prompt=build_extraction_prompt(segment, self.config.industry),
                temperature=0.0,
                request_tag=f"extract:{article_id}:{i}",
            )
            try:
                response = self.backend.complete(request)
            except (BackendUnavailable, ScriptMiss, ReplayMiss) as exc:
                log.warning("backend failed article=%s segment=%d error=%s", article_id, i, exc)
                backend_failures += 1
                continue
            try:
                entities.extend(parse_entity_list(response.text, self.diagnostics))
            except EmptyParse:
                parse_failures += 1
        return _ArticleResult(article_id, entities, parse_failures, backend_failures)

    def _budget_hit(self, state: CrawlState) -> bool:
        return (
            len(self.graph.nodes) >= self.config.max_nodes
            or state.stats.articles_processed >= self.config.max_articles
        )

    def _apply(self, state: CrawlState, harvest: _Harvest) -> None:
        state.visited.add(harvest.keyword)
        if harvest.fetch_failed:
            state.stats.fetch_failures += 1
            return
        for result in harvest.articles:
            if self._budget_hit(state):
                break
            state.stats.articles_processed += 1
            state.stats.parse_failures += result.parse_failures
            state.stats.backend_failures += result.backend_failures
            state.stats.entities_extracted += len(result.entities)
            nodes_before = len(self.graph.nodes)
            edges_before = len(self.graph.edges)
            mentioned = {harvest.keyword}
            for entity in result.entities:
                try:
                    cid = self.graph.upsert_entity(entity.name, entity.description, result.article_id)
                except EmptyName:
                    log.debug("dropped unusable entity name %r", entity.name)
                    continue
                mentioned.add(cid)
                if cid not in state.ever_enqueued:
                    state.frontier.append(cid)
                    state.ever_enqueued.add(cid)
            self.graph.add_comention(result.article_id, mentioned)
            state.stats.nodes_created += len(self.graph.nodes) - nodes_before
            state.stats.edges_created += len(self.graph.edges) - edges_before
        log.info(
            "crawl keyword=%s articles=%d frontier=%d nodes=%d edges=%d",
            harvest.keyword,
            len(harvest.articles),
            len(state.frontier),
            len(self.graph.nodes),
            len(self.graph.edges),
        )


def run_crawl(
    config: CrawlConfig,
    source: Union[Corpus, ArticleFetcher],
    backend: Backend,
    graph: SupplyChainGraph | None = None,
) -> tuple[SupplyChainGraph, CrawlReport]:
    """Run a crawl to exhaustion or budget; returns the graph and a report."""
    return Crawler(config, source, backend, graph).run()
