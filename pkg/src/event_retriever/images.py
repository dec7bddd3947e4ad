"""Stage 3: gather candidate images from reranked articles, score them, pick the final list."""

from __future__ import annotations

import logging
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np

from .corpus import Corpus, ImageRecord
from .errors import ProviderConfigError
from .index import RankedList
from .providers import EmbeddingProvider

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StageConfig:
    """K: articles considered. A: min distinct source articles. I: min candidate
    images. M: per-article cap in the first selection pass."""

    K: int = 10
    A: int = 3
    I: int = 10  # noqa: E741
    M: int = 3
    output_len: int = 10
    pad_token: str = "#"

    def __post_init__(self) -> None:
        if not 1 <= self.A <= self.K:
            raise ValueError("need 1 <= A <= K")
        if self.I < 1 or self.M < 1 or self.output_len < 1:
            raise ValueError("I, M and output_len must be >= 1")
        if not self.pad_token:
            raise ValueError("pad_token must be non-empty")


@dataclass(frozen=True)
class CandidateImage:
    image_id: str
    source_article_id: str
    article_rank: int
    uri: str = ""
    score: float | None = None

    def record(self) -> ImageRecord:
        return ImageRecord(self.image_id, self.source_article_id, self.uri)


def collect_candidates(ranked_articles: RankedList, corpus: Corpus, cfg: StageConfig) -> list[CandidateImage]:
    """Walk articles in rank order, stopping early once enough images from
    enough distinct articles are in hand.

    Articles contributing no new image do not count toward ``cfg.A``. An
    image id already collected from a better-ranked article is skipped.
    Traversal never goes past rank ``cfg.K``.
    """
    seen: set[str] = set()
    pool: list[CandidateImage] = []
    contributing = 0
    for rank, article_id in enumerate(ranked_articles.ids[: cfg.K], start=1):
        added = False
        for img in corpus.images_of(article_id):
            if img.image_id in seen:
                continue
            seen.add(img.image_id)
            pool.append(CandidateImage(img.image_id, article_id, rank, img.uri))
            added = True
        contributing += added
        if len(pool) >= cfg.I and contributing >= cfg.A:
            logger.debug("%s: collection stopped at rank %d", ranked_articles.query_id, rank)
            break
    return pool


def score_candidates(
    caption: str,
    candidates: Sequence[CandidateImage],
    text_provider: EmbeddingProvider,
    image_provider: EmbeddingProvider,
) -> list[CandidateImage]:
    """Score each candidate by cosine similarity to the caption; order kept."""
    if text_provider.dim != image_provider.dim:
        raise ProviderConfigError(
            f"caption embedder dim {text_provider.dim} != image embedder dim {image_provider.dim}"
        )
    if not candidates:
        return []
    cap = text_provider.embed_texts([caption])[0].astype(np.float64)
    imgs = image_provider.embed_images([c.record() for c in candidates]).astype(np.float64)
    sims = imgs @ cap
    return [replace(c, score=float(s)) for c, s in zip(candidates, sims)]


def rank_aware_select(candidates: Sequence[CandidateImage], cfg: StageConfig) -> list[str]:
    """Fixed-length image list favouring better-ranked articles.

    First pass: each article in rank order gives its best ``cfg.M`` images.
    Second pass: leftover images beyond the cap, by (article rank, score).
    Whatever is still missing is filled with ``cfg.pad_token``.
    """
    by_rank: dict[int, list[CandidateImage]] = defaultdict(list)
    for c in candidates:
        if c.score is None:
            raise ValueError(f"candidate {c.image_id!r} has not been scored")
        by_rank[c.article_rank].append(c)
    capped: list[str] = []
    overflow: list[str] = []
    for rank in sorted(by_rank):
        group = sorted(by_rank[rank], key=lambda c: (-c.score, c.image_id))
        capped.extend(c.image_id for c in group[: cfg.M])
        overflow.extend(c.image_id for c in group[cfg.M:])
    out: list[str] = []
    seen: set[str] = set()
    for image_id in capped + overflow:
        if len(out) == cfg.output_len:
            break
        if image_id not in seen:
            seen.add(image_id)
            out.append(image_id)
    out.extend([cfg.pad_token] * (cfg.output_len - len(out)))
    return out
