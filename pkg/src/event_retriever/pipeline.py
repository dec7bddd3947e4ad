"""End-to-end orchestration of dense retrieval, reranking and image selection."""

from __future__ import annotations

import json
import logging
import time
from collections import defaultdict
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import httpx
import numpy as np

from .config import PipelineConfig
from .corpus import Corpus, QueryCaption, ingest_corpus
from .errors import DimensionMismatchError, ProviderConfigError, ProviderError, RerankError, StageError
from .images import CandidateImage, collect_candidates, rank_aware_select, score_candidates
from .index import Index, RankedList, build_index
from .providers import EmbeddingProvider, InFlightLimiter, build_provider, format_document
from .rerank import RerankProvider, build_reranker, rerank_articles
from .submission import SubmissionTable

logger = logging.getLogger(__name__)

_PROVIDER_FAILURES = (ProviderError, httpx.HTTPError)


@dataclass
class QueryResult:
    query_id: str
    caption: str
    stage1: RankedList
    articles: RankedList
    candidates: list[CandidateImage]
    images: list[str]
    reranked: bool = True
    timings: dict[str, float] = field(default_factory=dict)

    def provenance(self, pad_token: str = "#") -> list[dict[str, Any]]:
        by_id = {c.image_id: c for c in self.candidates}
        article_scores = dict(self.articles.entries)
        stage1_scores = dict(self.stage1.entries)
        out = []
        for image_id in self.images:
            if image_id == pad_token:
                continue
            c = by_id[image_id]
            out.append({
                "image_id": image_id,
                "source_article_id": c.source_article_id,
                "article_rank": c.article_rank,
                "image_score": c.score,
                "rerank_score": article_scores.get(c.source_article_id),
                "dense_score": stage1_scores.get(c.source_article_id),
            })
        return out

    def to_json(self, pad_token: str = "#") -> dict[str, Any]:
        return {
            "query_id": self.query_id,
            "images": list(self.images),
            "provenance": self.provenance(pad_token),
            "articles": [{"id": i, "score": s} for i, s in self.articles.entries],
            "reranked": self.reranked,
        }


def embed_corpus(corpus: Corpus, provider: EmbeddingProvider) -> tuple[list[str], np.ndarray]:
    ids = [a.article_id for a in corpus]
    if not ids:
        return [], np.zeros((0, provider.dim), np.float32)
    docs = [format_document(a, provider.spec.max_chars) for a in corpus]
    return ids, provider.embed_texts(docs)


class Engine:
    """Immutable retrieval state plus providers; safe to share across threads."""

    def __init__(
        self,
        config: PipelineConfig,
        corpus: Corpus,
        index: Index,
        text: EmbeddingProvider,
        caption_image: EmbeddingProvider,
        image: EmbeddingProvider,
        reranker: RerankProvider,
    ):
        if len(index) and index.dim != text.dim:
            raise DimensionMismatchError(f"index dim {index.dim} != text provider dim {text.dim}")
        if caption_image.dim != image.dim:
            raise ProviderConfigError(f"caption/image embedder dims differ: {caption_image.dim} vs {image.dim}")
        self.config = config
        self.corpus = corpus
        self.index = index
        self.text = text
        self.caption_image = caption_image
        self.image = image
        self.reranker = reranker

    @classmethod
    def from_config(
        cls,
        config: PipelineConfig,
        *,
        corpus: Corpus | None = None,
        index: Index | None = None,
        transport: httpx.BaseTransport | None = None,
    ) -> Engine:
        corpus = corpus if corpus is not None else ingest_corpus(config.corpus)
        limiter = InFlightLimiter(config.max_in_flight)
        common = dict(seed=config.seed, retry=config.retry, limiter=limiter, transport=transport)
        text = build_provider(config.text, **common)
        caption_image = build_provider(config.caption_image_spec, **common)
        image = build_provider(config.image, **common)
        reranker = build_reranker(config.rerank, **common)
        if index is None:
            if config.index_dir is not None and (config.index_dir / "manifest.json").exists():
                index = Index.load(config.index_dir)
            else:
                logger.info("no persisted index; embedding %d articles in memory", len(corpus))
                ids, vecs = embed_corpus(corpus, text)
                index = build_index(ids=ids, vectors=vecs, backend=config.index_backend, params=config.ann)
        return cls(config, corpus, index, text, caption_image, image, reranker)

    # -- stages -------------------------------------------------------------

    def dense(self, query: QueryCaption) -> RankedList:
        vec = self.text.embed_texts([query.caption])[0]
        return self.index.top_k(vec, self.config.stage1_pool, query_id=query.query_id)

    def rerank(self, query: QueryCaption, stage1: RankedList) -> tuple[RankedList, bool]:
        k = self.config.stage.K
        try:
            return rerank_articles(query.caption, stage1, self.reranker, k, self.corpus, instruct=self.config.instruct), True
        except RerankError as exc:
            if self.config.on_provider_failure == "fail":
                raise
            logger.warning("%s; falling back to dense order", exc)
            return stage1.head(k), False

    def select_images(self, query: QueryCaption, articles: RankedList) -> tuple[list[CandidateImage], list[str]]:
        cfg = self.config.stage
        pool = collect_candidates(articles, self.corpus, cfg)
        if not pool:
            return [], rank_aware_select([], cfg)
        try:
            scored = score_candidates(query.caption, pool, self.caption_image, self.image)
        except _PROVIDER_FAILURES as exc:
            if self.config.on_provider_failure == "fail" or isinstance(exc, ProviderConfigError):
                raise StageError(query.query_id, exc) from exc
            logger.warning("%s: image scoring failed (%s); keeping collection order", query.query_id, exc)
            scored = [replace(c, score=-float(n)) for n, c in enumerate(pool)]
        return scored, rank_aware_select(scored, cfg)

    def retrieve(self, query: QueryCaption) -> QueryResult:
        timings: dict[str, float] = {}
        t0 = time.perf_counter()
        try:
            stage1 = self.dense(query)
        except _PROVIDER_FAILURES as exc:
            if self.config.on_provider_failure == "fail" or isinstance(exc, ProviderConfigError):
                raise StageError(query.query_id, exc) from exc
            logger.warning("%s: caption embedding failed (%s); emitting an empty row", query.query_id, exc)
            empty = RankedList(query.query_id)
            return QueryResult(query.query_id, query.caption, empty, empty, [], rank_aware_select([], self.config.stage), False)
        t1 = time.perf_counter()
        articles, reranked = self.rerank(query, stage1)
        t2 = time.perf_counter()
        candidates, images = self.select_images(query, articles)
        t3 = time.perf_counter()
        timings.update(dense=t1 - t0, rerank=t2 - t1, images=t3 - t2)
        logger.debug("%s timings %s, %d candidates", query.query_id, timings, len(candidates))
        return QueryResult(query.query_id, query.caption, stage1, articles, candidates, images, reranked, timings)

    def run(self, queries: Sequence[QueryCaption]) -> list[QueryResult]:
        if self.config.workers > 1 and len(queries) > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                results = list(pool.map(self.retrieve, queries))
        else:
            results = [self.retrieve(q) for q in queries]
        totals: dict[str, float] = defaultdict(float)
        for r in results:
            for stage, secs in r.timings.items():
                totals[stage] += secs
        if results:
            n_cand = sum(len(r.candidates) for r in results)
            logger.info(
                "%d queries; stage seconds %s; %.1f candidate images/query",
                len(results), {k: round(v, 3) for k, v in totals.items()}, n_cand / len(results),
            )
        return results

    def health(self) -> dict[str, Any]:
        providers = {
            "text": self.text.healthy(),
            "image": self.image.healthy(),
            "image_text": self.caption_image.healthy(),
            "rerank": self.reranker.healthy(),
        }
        return {
            "status": "ok" if all(providers.values()) else "degraded",
            "index": {"count": len(self.index), "dim": self.index.dim if len(self.index) else None, "backend": self.index.backend},
            "corpus": {"articles": self.corpus.n_articles, "images": self.corpus.n_images},
            "providers": {k: "ok" if v else "unreachable" for k, v in providers.items()},
        }


def to_submission(results: Iterable[QueryResult], config: PipelineConfig) -> SubmissionTable:
    table = SubmissionTable(output_len=config.stage.output_len, pad_token=config.stage.pad_token)
    for r in results:
        table.add(r.query_id, r.images)
    return table


def write_intermediates(results: Sequence[QueryResult], directory: str | Path) -> None:
    """Persist per-stage outputs as JSONL so later stages can be re-run alone."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "stage1.jsonl", "w", encoding="utf-8", newline="\n") as f1, \
            open(d / "articles.jsonl", "w", encoding="utf-8", newline="\n") as f2, \
            open(d / "candidates.jsonl", "w", encoding="utf-8", newline="\n") as f3:
        for r in results:
            f1.write(json.dumps(r.stage1.to_json("articles")) + "\n")
            f2.write(json.dumps(r.articles.to_json("articles")) + "\n")
            items = [{"id": c.image_id, "score": c.score, "article_rank": c.article_rank} for c in r.candidates]
            f3.write(json.dumps({"query_id": r.query_id, "stage": "candidates", "items": items}) + "\n")


def read_ranked_lists(path: str | Path) -> dict[str, RankedList]:
    out: dict[str, RankedList] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out[obj["query_id"]] = RankedList.from_json(obj)
    return out


def write_ranked_lists(lists: Iterable[RankedList], path: str | Path, stage: str = "articles") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rl in lists:
            fh.write(json.dumps(rl.to_json(stage)) + "\n")


def run_retrieval(
    config: PipelineConfig,
    queries: Sequence[QueryCaption],
    *,
    engine: Engine | None = None,
    intermediates: str | Path | None = None,
) -> SubmissionTable:
    if not queries:
        return SubmissionTable(output_len=config.stage.output_len, pad_token=config.stage.pad_token)
    engine = engine or Engine.from_config(config)
    results = engine.run(queries)
    if intermediates is not None:
        write_intermediates(results, intermediates)
    return to_submission(results, config)
